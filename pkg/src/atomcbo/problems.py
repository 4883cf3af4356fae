"""Target Hamiltonians: random Pauli sums, the GHZ projector, and file I/O."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hilbert import PAULI_LETTERS, PauliSum

__all__ = [
    "RandomHamiltonianSpec",
    "sample_random_hamiltonian",
    "ghz_state",
    "ghz_target",
    "load_pauli_sum",
    "save_pauli_sum",
    "PauliFileError",
    "MAX_RANDOM_QUBITS",
]

MAX_RANDOM_QUBITS = 6


class PauliFileError(ValueError):
    """Malformed Pauli-sum file."""


@dataclass(frozen=True)
class RandomHamiltonianSpec:
    num_qubits: int
    inclusion_prob: float = 0.2
    coeff_range: tuple[float, float] = (0.0, 1.0)
    seed: int | None = None

    def __post_init__(self):
        if self.num_qubits < 1:
            raise ValueError("num_qubits must be >= 1")
        if not 0 < self.inclusion_prob <= 1:
            raise ValueError(f"inclusion_prob must lie in (0, 1], got {self.inclusion_prob}")
        lo, hi = self.coeff_range
        if lo > hi:
            raise ValueError(f"empty coefficient range {self.coeff_range}")


def sample_random_hamiltonian(spec: RandomHamiltonianSpec,
                              rng: np.random.Generator | None = None) -> PauliSum:
    """Include every Pauli string independently, with uniform coefficients.

    All ``4**m`` strings (the identity included) are visited in
    lexicographic ``IXYZ`` order; each is kept with probability
    ``inclusion_prob`` and given a coefficient drawn uniformly from
    ``coeff_range``.
    """
    m = spec.num_qubits
    if m > MAX_RANDOM_QUBITS:
        raise ValueError(f"refusing to enumerate 4**{m} Pauli strings (max {MAX_RANDOM_QUBITS} qubits)")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    words = ["".join(w) for w in itertools.product(PAULI_LETTERS, repeat=m)]
    keep = rng.random(len(words)) < spec.inclusion_prob
    coeffs = rng.uniform(*spec.coeff_range, size=len(words))
    terms = tuple((float(c), w) for w, c, k in zip(words, coeffs, keep) if k)
    return PauliSum(terms, m)


def ghz_state(m: int) -> np.ndarray:
    psi = np.zeros(2**m, dtype=complex)
    psi[0] = psi[-1] = 1 / np.sqrt(2)
    return psi


def ghz_target(m: int) -> np.ndarray:
    """``-|GHZ><GHZ|`` on ``m`` qubits; ground energy -1."""
    if m < 2:
        raise ValueError("GHZ target needs at least 2 qubits")
    psi = ghz_state(m)
    return -np.outer(psi, psi.conj())


def save_pauli_sum(p: PauliSum, path) -> None:
    Path(path).write_text(p.to_json() + "\n")


def load_pauli_sum(path) -> PauliSum:
    """Read a Pauli-sum JSON file.

    Raises :class:`PauliFileError` with the offending line for malformed
    JSON, and with the term index for schema violations.
    """
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        lines = text.splitlines()
        context = lines[exc.lineno - 1] if 0 < exc.lineno <= len(lines) else ""
        raise PauliFileError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}: {context!r}") from exc
    try:
        return PauliSum.from_dict(data)
    except ValueError as exc:
        raise PauliFileError(f"{path}: {exc}") from exc
