"""
Neutral-atom model: configurations, qubit encodings, pulse containers, and
the control and interaction Hamiltonians built from them.

Units follow the convention C3 = C6 = 1; distances, pulse amplitudes and
times are all expressed relative to that interaction coefficient.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from .hilbert import basis_state, embed_local

__all__ = [
    "C3",
    "C6",
    "DEFAULT_Z_MAX",
    "Configuration",
    "Encoding",
    "ChannelKind",
    "PulseSet",
    "channel_layout",
    "control_operators",
    "interaction_hamiltonian",
    "pair_operator",
    "pair_operators",
    "initial_state",
]

C3 = 1.0
C6 = 1.0
DEFAULT_Z_MAX = 20.0


class ChannelKind(str, enum.Enum):
    OMEGA_01 = "omega_01"
    DELTA_1 = "delta_1"
    OMEGA_1R = "omega_1r"
    DELTA_R = "delta_r"


class Encoding(str, enum.Enum):
    """Qubit encodings of the three-level atom ``{g0, g1, r}``.

    ``GG_VDW``: ``|0>=g0, |1>=g1`` with ``r`` as an auxiliary level (qutrit
    simulation), Van der Waals ``|rr><rr|`` interaction.
    ``GR_VDW``: ``|0>=g1, |1>=r``, Van der Waals interaction.
    ``DIPOLE``: ``|0>=g1, |1>=r``, dipole-dipole exchange interaction.
    """

    GG_VDW = "gg_vdw"
    GR_VDW = "gr_vdw"
    DIPOLE = "dipole"

    @property
    def local_dim(self) -> int:
        return 3 if self is Encoding.GG_VDW else 2

    @property
    def rydberg_level(self) -> int:
        return 2 if self is Encoding.GG_VDW else 1

    @property
    def power(self) -> int:
        """Exponent of the distance dependence of the pair interaction."""
        return 3 if self is Encoding.DIPOLE else 6

    @property
    def strength(self) -> float:
        return C3 if self is Encoding.DIPOLE else C6

    @property
    def kinds(self) -> tuple[ChannelKind, ...]:
        if self is Encoding.GG_VDW:
            return (ChannelKind.OMEGA_01, ChannelKind.DELTA_1,
                    ChannelKind.OMEGA_1R, ChannelKind.DELTA_R)
        # two-level encodings only drive the g1 <-> r transition
        return (ChannelKind.OMEGA_1R, ChannelKind.DELTA_R)

    def num_channels(self, num_atoms: int) -> int:
        return len(self.kinds) * num_atoms

    @classmethod
    def parse(cls, value: "str | Encoding") -> "Encoding":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"gg": "gg_vdw", "gr": "gr_vdw", "dip": "dipole", "dipole_dipole": "dipole"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(
                f"unknown encoding {value!r}; choose from {[e.value for e in cls]}"
            ) from None


def channel_layout(enc: Encoding, num_atoms: int) -> list[tuple[int, ChannelKind]]:
    """``(atom, kind)`` for every channel, atom-major."""
    return [(j, kind) for j in range(num_atoms) for kind in enc.kinds]


@dataclass(frozen=True, eq=False)
class Configuration:
    """Ordered positions of ``m`` atoms in the plane."""

    positions: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 1:
            raise ValueError(f"positions must have shape (m, 2), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        if self.num_atoms > 1 and np.min(self.pairwise_distances()) <= 0:
            raise ValueError("coincident atoms in configuration")

    @property
    def num_atoms(self) -> int:
        return self.positions.shape[0]

    def pairwise_distances(self) -> np.ndarray:
        """Distances for pairs ``i < j`` in lexicographic order."""
        return np.array(
            [np.linalg.norm(self.positions[i] - self.positions[j])
             for i, j in combinations(range(self.num_atoms), 2)]
        )

    def translated(self, shift) -> "Configuration":
        return Configuration(self.positions + np.asarray(shift, dtype=float))

    def scaled(self, factor: float) -> "Configuration":
        return Configuration(self.positions * factor)

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return np.array_equal(self.positions, other.positions)

    def __repr__(self):
        return f"Configuration({self.positions.tolist()})"

    def to_dict(self) -> dict:
        return {"positions": self.positions.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Configuration":
        if not isinstance(data, dict) or "positions" not in data:
            raise ValueError("configuration JSON must be an object with 'positions'")
        return cls(np.asarray(data["positions"], dtype=float))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Configuration":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class PulseSet:
    """Piecewise-constant control amplitudes.

    ``values[l, k]`` is the amplitude of channel ``l`` on the ``k``-th of
    ``K`` equal steps covering ``[0, duration]``.
    """

    values: np.ndarray
    z_max: float = DEFAULT_Z_MAX
    duration: float = 1.0

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 2:
            raise ValueError(f"pulse values must be 2-d (channel, step), got ndim={vals.ndim}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("pulse values must be finite")
        if not self.z_max > 0 or not self.duration > 0:
            raise ValueError("z_max and duration must be positive")
        if np.any(np.abs(vals) > self.z_max):
            raise ValueError(f"pulse amplitude exceeds z_max={self.z_max}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def num_channels(self) -> int:
        return self.values.shape[0]

    @property
    def num_steps(self) -> int:
        return self.values.shape[1]

    @property
    def dt(self) -> float:
        return self.duration / self.num_steps

    def with_values(self, values: np.ndarray, clip: bool = False) -> "PulseSet":
        if clip:
            values = np.clip(values, -self.z_max, self.z_max)
        return PulseSet(values, self.z_max, self.duration)

    @classmethod
    def zeros(cls, num_channels: int, num_steps: int = 100, z_max: float = DEFAULT_Z_MAX,
              duration: float = 1.0) -> "PulseSet":
        return cls(np.zeros((num_channels, num_steps)), z_max, duration)

    @classmethod
    def random(cls, num_channels: int, rng: np.random.Generator, num_steps: int = 100,
               amplitude: float = 1.0, z_max: float = DEFAULT_Z_MAX,
               duration: float = 1.0) -> "PulseSet":
        """Uniform amplitudes in ``[-amplitude, amplitude]`` (clipped to ``z_max``)."""
        vals = rng.uniform(-amplitude, amplitude, size=(num_channels, num_steps))
        return cls(np.clip(vals, -z_max, z_max), z_max, duration)

    def __eq__(self, other):
        if not isinstance(other, PulseSet):
            return NotImplemented
        return (np.array_equal(self.values, other.values)
                and self.z_max == other.z_max and self.duration == other.duration)

    def to_dict(self) -> dict:
        return {"z_max": self.z_max, "duration": self.duration, "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "PulseSet":
        return cls(np.asarray(data["values"], dtype=float), float(data["z_max"]),
                   float(data["duration"]))


def _ket_bra(a: int, b: int, d: int) -> np.ndarray:
    out = np.zeros((d, d), dtype=complex)
    out[a, b] = 1.0
    return out


def _local_control(enc: Encoding, kind: ChannelKind) -> np.ndarray:
    d = enc.local_dim
    r = enc.rydberg_level
    if enc is Encoding.GG_VDW:
        lower = {ChannelKind.OMEGA_01: (0, 1), ChannelKind.OMEGA_1R: (1, r)}
        upper = {ChannelKind.DELTA_1: 1, ChannelKind.DELTA_R: r}
    else:
        # g1 is |0>, r is |1>
        lower = {ChannelKind.OMEGA_1R: (0, 1)}
        upper = {ChannelKind.DELTA_R: 1}
    if kind in lower:
        a, b = lower[kind]
        return 0.5 * (_ket_bra(a, b, d) + _ket_bra(b, a, d))
    if kind in upper:
        return -_ket_bra(upper[kind], upper[kind], d)
    raise ValueError(f"channel {kind} not available for encoding {enc}")


def control_operators(enc: Encoding, num_atoms: int) -> np.ndarray:
    """Hermitian operators ``H_l`` with ``H_c[z] = sum_l z_l H_l``.

    Coupling channels give ``(|a><b| + |b><a|)/2`` on one atom and detuning
    channels give ``-|b><b|``, ordered as :func:`channel_layout`.
    """
    enc = Encoding.parse(enc)
    ops = [embed_local(_local_control(enc, kind), j, num_atoms)
           for j, kind in channel_layout(enc, num_atoms)]
    return np.array(ops)


def pair_operator(enc: Encoding, num_atoms: int, i: int, j: int) -> np.ndarray:
    """Distance-independent pair operator for atoms ``i`` and ``j``.

    ``|rr><rr|`` for the Van der Waals encodings, and the exchange
    ``|0 1><1 0| + |1 0><0 1|`` (g1 r <-> r g1) for the dipole encoding.
    """
    enc = Encoding.parse(enc)
    d = enc.local_dim
    r = enc.rydberg_level
    if enc is Encoding.DIPOLE:
        # |g1 r><r g1| on (i, j), identity elsewhere
        flip = _ket_bra(0, 1, d)
        out = _kron_pair(flip, flip.T, i, j, num_atoms, d)
        return out + out.conj().T
    proj = _ket_bra(r, r, d)
    return _kron_pair(proj, proj, i, j, num_atoms, d)


def _kron_pair(op_i: np.ndarray, op_j: np.ndarray, i: int, j: int, num_atoms: int,
               d: int) -> np.ndarray:
    eye = np.eye(d, dtype=complex)
    out = np.ones((1, 1), dtype=complex)
    for s in range(num_atoms):
        out = np.kron(out, op_i if s == i else op_j if s == j else eye)
    return out


def pair_operators(enc: Encoding, num_atoms: int) -> dict[tuple[int, int], np.ndarray]:
    return {(i, j): pair_operator(enc, num_atoms, i, j)
            for i, j in combinations(range(num_atoms), 2)}


def interaction_hamiltonian(X: Configuration, enc: Encoding) -> np.ndarray:
    """Position dependent interaction ``sum_{i<j} C / |x_i - x_j|^p V_ij``."""
    enc = Encoding.parse(enc)
    m = X.num_atoms
    dim = enc.local_dim**m
    out = np.zeros((dim, dim), dtype=complex)
    for (i, j), op in pair_operators(enc, m).items():
        dist = np.linalg.norm(X.positions[i] - X.positions[j])
        if dist == 0:
            raise ZeroDivisionError(f"atoms {i} and {j} coincide; interaction diverges")
        coupling = enc.strength / dist**enc.power
        if not np.isfinite(coupling):
            raise OverflowError(f"interaction between atoms {i} and {j} overflows")
        out += coupling * op
    return out


def initial_state(enc: Encoding, num_atoms: int) -> np.ndarray:
    """All atoms in computational ``|0>``."""
    enc = Encoding.parse(enc)
    return basis_state([0] * num_atoms, enc.local_dim)
