"""
Dense linear algebra for few-atom quantum states.

States are complex vectors of length ``d**m`` and operators are dense
``d**m x d**m`` complex arrays. Atom 0 is the most significant tensor
factor, so basis index ``i`` corresponds to the digits of ``i`` in base
``d`` read from left to right.
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "PauliSum",
    "EvolutionRecord",
    "basis_state",
    "materialize",
    "embed_local",
    "evolve",
    "expectation",
    "ground_energy",
    "is_hermitian",
]

PAULI_LETTERS = "IXYZ"

_PAULI_2 = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

HERMITIAN_TOL = 1e-12


@dataclass(frozen=True)
class PauliSum:
    """Real-weighted sum of Pauli strings.

    Parameters
    ----------
    terms : sequence of (float, str)
        ``(coefficient, word)`` pairs. Every word has the same length ``m``
        and uses letters from ``IXYZ``.
    num_qubits : int, optional
        Inferred from the first word when omitted.
    """

    terms: tuple[tuple[float, str], ...]
    num_qubits: int = field(default=-1)

    def __post_init__(self):
        terms = tuple((_real_coeff(c), str(s).upper()) for c, s in self.terms)
        m = self.num_qubits
        if m < 0:
            if not terms:
                raise ValueError("num_qubits is required for an empty PauliSum")
            m = len(terms[0][1])
        for coeff, word in terms:
            if len(word) != m:
                raise ValueError(
                    f"Pauli string {word!r} has length {len(word)}, expected {m}"
                )
            bad = set(word) - set(PAULI_LETTERS)
            if bad:
                raise ValueError(f"unknown Pauli letter(s) {sorted(bad)} in {word!r}")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "num_qubits", m)

    def __add__(self, other: "PauliSum") -> "PauliSum":
        if other.num_qubits != self.num_qubits:
            raise ValueError("cannot add PauliSums on different qubit counts")
        return PauliSum(self.terms + other.terms, self.num_qubits)

    def scaled(self, factor: float) -> "PauliSum":
        return PauliSum(tuple((factor * c, s) for c, s in self.terms), self.num_qubits)

    def to_dict(self) -> dict:
        return {
            "num_qubits": self.num_qubits,
            "terms": [{"coeff": c, "pauli": s} for c, s in self.terms],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PauliSum":
        if not isinstance(data, dict) or "terms" not in data:
            raise ValueError("PauliSum JSON must be an object with a 'terms' list")
        m = data.get("num_qubits", -1)
        if not isinstance(m, int) or isinstance(m, bool):
            raise ValueError(f"num_qubits must be an integer, got {m!r}")
        terms = []
        for i, entry in enumerate(data["terms"]):
            try:
                coeff, word = entry["coeff"], entry["pauli"]
            except (KeyError, TypeError):
                raise ValueError(f"term {i}: expected {{'coeff', 'pauli'}}, got {entry!r}")
            if isinstance(coeff, bool) or not isinstance(coeff, (int, float)):
                raise ValueError(f"term {i}: coefficient must be a real number, got {coeff!r}")
            if not isinstance(word, str):
                raise ValueError(f"term {i}: pauli must be a string, got {word!r}")
            terms.append((float(coeff), word))
        return cls(tuple(terms), m)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "PauliSum":
        return cls.from_dict(json.loads(text))


def _real_coeff(c) -> float:
    if isinstance(c, complex):
        if c.imag != 0:
            raise ValueError(f"PauliSum coefficients must be real, got {c}")
        c = c.real
    c = float(c)
    if not np.isfinite(c):
        raise ValueError(f"PauliSum coefficient is not finite: {c}")
    return c


@functools.lru_cache(maxsize=None)
def _local_pauli(letter: str, local_dim: int) -> np.ndarray:
    # qutrit: act on the {|0>,|1>} block, zero on |r>
    out = np.zeros((local_dim, local_dim), dtype=complex)
    out[:2, :2] = _PAULI_2[letter]
    out.setflags(write=False)
    return out


def _kron_all(factors: Iterable[np.ndarray]) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for f in factors:
        out = np.kron(out, f)
    return out


def materialize(p: PauliSum, local_dim: int = 2) -> np.ndarray:
    """Dense matrix of a PauliSum on ``local_dim**m`` dimensional space.

    For ``local_dim == 3`` each Pauli factor is embedded in the
    ``{|0>, |1>}`` block of the qutrit and acts as zero on ``|r>``
    (including the identity letter).
    """
    if local_dim not in (2, 3):
        raise ValueError(f"local_dim must be 2 or 3, got {local_dim}")
    dim = local_dim**p.num_qubits
    out = np.zeros((dim, dim), dtype=complex)
    for coeff, word in p.terms:
        out += coeff * _kron_all(_local_pauli(ch, local_dim) for ch in word)
    return out


def embed_local(op: np.ndarray, site: int, num_atoms: int) -> np.ndarray:
    """Tensor a single-site operator into the full space at ``site``."""
    d = op.shape[0]
    eye = np.eye(d, dtype=complex)
    return _kron_all(op if j == site else eye for j in range(num_atoms))


def basis_state(digits: Sequence[int], local_dim: int) -> np.ndarray:
    """Computational basis product state ``|digits[0] digits[1] ...>``."""
    index = 0
    for digit in digits:
        if not 0 <= digit < local_dim:
            raise ValueError(f"level {digit} out of range for local_dim={local_dim}")
        index = index * local_dim + digit
    psi = np.zeros(local_dim ** len(digits), dtype=complex)
    psi[index] = 1.0
    return psi


def is_hermitian(matrix: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    matrix = np.asarray(matrix)
    return (
        matrix.ndim == 2
        and matrix.shape[0] == matrix.shape[1]
        and np.max(np.abs(matrix - matrix.conj().T), initial=0.0) < tol
    )


@dataclass(frozen=True)
class EvolutionRecord:
    """Cached result of one piecewise-constant Schroedinger solve.

    Attributes
    ----------
    step_unitaries : ndarray, shape (K, D, D)
        ``step_unitaries[k]`` propagates from grid point ``k`` to ``k + 1``.
    cumulative_unitaries : ndarray, shape (K + 1, D, D)
        ``U(t_k)``; entry 0 is the identity.
    states : ndarray, shape (K + 1, D)
        ``psi(t_k) = U(t_k) psi0``.
    dt : float
        Step length.
    eigvals, eigvecs : ndarray
        Spectral decomposition of each step Hamiltonian, reused for
        derivatives of the step propagators.
    """

    step_unitaries: np.ndarray
    cumulative_unitaries: np.ndarray
    states: np.ndarray
    dt: float
    eigvals: np.ndarray
    eigvecs: np.ndarray

    @property
    def num_steps(self) -> int:
        return self.step_unitaries.shape[0]

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def gamma(self, k: int) -> np.ndarray:
        """Propagator from grid point ``k`` to the final time, ``U(T) U(t_k)^dagger``."""
        return self.cumulative_unitaries[-1] @ self.cumulative_unitaries[k].conj().T

    def step_derivative_kernels(self) -> np.ndarray:
        """Divided differences of ``exp(-i w dt)`` in each step eigenbasis.

        ``Phi[k, a, b]`` is such that the derivative of step ``k``'s
        propagator in direction ``A`` equals
        ``V (Phi * (V^dagger A V)) V^dagger``.
        """
        w = self.eigvals
        phase = np.exp(-1j * self.dt * w)
        dw = w[:, :, None] - w[:, None, :]
        dphase = phase[:, :, None] - phase[:, None, :]
        close = np.abs(dw) < 1e-8
        safe = np.where(close, 1.0, dw)
        # confluent limit: d/dw exp(-i w dt) = -i dt exp(-i w dt)
        avg = 0.5 * (phase[:, :, None] + phase[:, None, :])
        return np.where(close, -1j * self.dt * avg, dphase / safe)


def _check_square(matrix: np.ndarray, dim: int, name: str) -> None:
    if matrix.shape != (dim, dim):
        raise ValueError(f"{name} has shape {matrix.shape}, expected {(dim, dim)}")


def evolve(
    psi0: np.ndarray,
    drift: np.ndarray,
    pulses: np.ndarray,
    controls: Sequence[np.ndarray] | np.ndarray,
    dt: float,
) -> EvolutionRecord:
    """Solve ``i d/dt psi = (drift + sum_l z_l(t) H_l) psi`` for step pulses.

    Parameters
    ----------
    psi0 : ndarray, shape (D,)
        Initial state.
    drift : ndarray, shape (D, D)
        Time independent Hamiltonian (the interaction term).
    pulses : ndarray, shape (L, K)
        Pulse amplitude of channel ``l`` on step ``k``.
    controls : sequence of L arrays of shape (D, D)
        Hermitian control operators.
    dt : float
        Step duration.
    """
    psi0 = np.asarray(psi0, dtype=complex)
    drift = np.asarray(drift, dtype=complex)
    pulses = np.asarray(pulses, dtype=float)
    controls = np.asarray(controls, dtype=complex)
    dim = psi0.shape[0]
    _check_square(drift, dim, "drift Hamiltonian")
    if pulses.ndim != 2:
        raise ValueError(f"pulses must be a 2-d (channel, step) array, got ndim={pulses.ndim}")
    n_channels, n_steps = pulses.shape
    if controls.shape != (n_channels, dim, dim):
        raise ValueError(
            f"controls have shape {controls.shape}, expected {(n_channels, dim, dim)}"
        )
    if not np.all(np.isfinite(pulses)):
        raise ValueError("pulse values must be finite")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")

    hams = drift[None, :, :] + np.einsum("lk,lij->kij", pulses, controls)
    w, v = np.linalg.eigh(hams)
    steps = (v * np.exp(-1j * dt * w)[:, None, :]) @ v.conj().transpose(0, 2, 1)

    cumulative = np.empty((n_steps + 1, dim, dim), dtype=complex)
    states = np.empty((n_steps + 1, dim), dtype=complex)
    cumulative[0] = np.eye(dim)
    states[0] = psi0
    for k in range(n_steps):
        cumulative[k + 1] = steps[k] @ cumulative[k]
        states[k + 1] = steps[k] @ states[k]
    return EvolutionRecord(steps, cumulative, states, float(dt), w, v)


def expectation(psi: np.ndarray, H: np.ndarray) -> float:
    """Real expectation value ``<psi|H|psi>`` of a Hermitian operator."""
    psi = np.asarray(psi)
    _check_square(np.asarray(H), psi.shape[0], "operator")
    return float(np.real(np.vdot(psi, H @ psi)))


def ground_energy(H: np.ndarray) -> tuple[float, np.ndarray]:
    """Smallest eigenvalue of a Hermitian matrix and a normalized eigenvector."""
    H = np.asarray(H, dtype=complex)
    if not is_hermitian(H, tol=1e-10):
        raise np.linalg.LinAlgError("ground_energy requires a Hermitian matrix")
    w, v = np.linalg.eigh(H)
    return float(w[0]), v[:, 0]
