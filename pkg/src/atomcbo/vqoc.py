"""
Pulse-level variational optimization for a fixed atom configuration.

The cost of pulses ``z`` at configuration ``X`` is

    J(X, z) = <psi(T)| H_targ |psi(T)> + mu * sum_{l,k} z_{l,k}^2 dt

with ``psi`` evolved from ``|0...0>`` under the interaction Hamiltonian
plus the pulse-weighted control operators. Gradients are obtained from a
single forward solve and one backward sweep of the costate
``Gamma(T, t_k)^dagger H_targ psi(T)``.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .hardware import (
    DEFAULT_Z_MAX,
    Configuration,
    Encoding,
    PulseSet,
    control_operators,
    initial_state,
    interaction_hamiltonian,
    pair_operators,
)
from .hilbert import EvolutionRecord, evolve

__all__ = [
    "PulseSettings",
    "PulseCostReport",
    "PulseOptResult",
    "NumericalFailure",
    "cost",
    "pulse_gradient",
    "optimize_pulses",
    "position_gradient",
    "pair_gradient_prefactors",
]

logger = logging.getLogger(__name__)

# position gradients above this are reported as overflow
POSITION_GRADIENT_LIMIT = 1e12


class NumericalFailure(RuntimeError):
    """Raised when an optimization produces non-finite or overflowing values."""


@dataclass(frozen=True)
class PulseSettings:
    """Pulse grid, regularization and descent settings shared by all agents."""

    num_steps: int = 100
    duration: float = 1.0
    mu: float = 0.0
    rate: float = 10.0
    z_max: float = DEFAULT_Z_MAX
    init_amplitude: float = 10.0
    clamp: bool = True
    backtrack: bool = True

    def __post_init__(self):
        if self.num_steps < 1 or not self.duration > 0:
            raise ValueError("num_steps must be >= 1 and duration > 0")
        if self.mu < 0 or not self.rate > 0 or not self.z_max > 0:
            raise ValueError("require mu >= 0, rate > 0, z_max > 0")
        if self.init_amplitude < 0:
            raise ValueError("init_amplitude must be >= 0")

    def initial_pulses(self, num_channels: int, rng: np.random.Generator) -> PulseSet:
        return PulseSet.random(num_channels, rng, self.num_steps, self.init_amplitude,
                               self.z_max, self.duration)


@dataclass(frozen=True)
class PulseCostReport:
    energy: float
    regularizer: float
    total: float
    gradient: np.ndarray | None = None
    gradient_norm: float = float("nan")


@dataclass(frozen=True)
class PulseOptResult:
    pulses: PulseSet
    trace: list[float]
    gradient_norm: float = float("nan")
    rate: float = float("nan")

    def __iter__(self):
        # (pulses, trace) unpacking
        return iter((self.pulses, self.trace))


@functools.lru_cache(maxsize=64)
def _controls(enc: Encoding, num_atoms: int) -> np.ndarray:
    ops = control_operators(enc, num_atoms)
    ops.setflags(write=False)
    return ops


def _forward(X: Configuration, z: PulseSet, enc: Encoding,
             drift: np.ndarray | None = None) -> tuple[EvolutionRecord, np.ndarray]:
    enc = Encoding.parse(enc)
    m = X.num_atoms
    controls = _controls(enc, m)
    if z.num_channels != controls.shape[0]:
        raise ValueError(
            f"pulse set has {z.num_channels} channels, encoding {enc.value} with "
            f"{m} atoms needs {controls.shape[0]}"
        )
    if drift is None:
        drift = interaction_hamiltonian(X, enc)
    record = evolve(initial_state(enc, m), drift, z.values, controls, z.dt)
    return record, controls


def _check_target(H_targ: np.ndarray, dim: int) -> np.ndarray:
    H_targ = np.asarray(H_targ, dtype=complex)
    if H_targ.shape != (dim, dim):
        raise ValueError(f"target Hamiltonian has shape {H_targ.shape}, expected {(dim, dim)}")
    return H_targ


def _sensitivity(record: EvolutionRecord, H_targ: np.ndarray) -> np.ndarray:
    """Per-step matrices ``B_k`` with ``dE/dtheta_k = 2 Re sum(A * B_k)``.

    ``A`` is the derivative of step ``k``'s Hamiltonian w.r.t. ``theta``.
    """
    n_steps = record.num_steps
    psi_T = record.final_state
    costate = np.empty_like(record.states)
    costate[n_steps] = H_targ @ psi_T
    for k in range(n_steps, 0, -1):
        costate[k - 1] = record.step_unitaries[k - 1].conj().T @ costate[k]
    V = record.eigvecs
    Vh = V.conj().transpose(0, 2, 1)
    # amplitudes in each step eigenbasis
    c = np.einsum("kab,kb->ka", Vh, costate[1:])
    p = np.einsum("kab,kb->ka", Vh, record.states[:-1])
    M = c.conj()[:, :, None] * record.step_derivative_kernels() * p[:, None, :]
    return np.conj(V) @ M @ V.transpose(0, 2, 1)


def _energy_gradient(record: EvolutionRecord, controls: np.ndarray, H_targ: np.ndarray,
                     method: str) -> np.ndarray:
    if method == "exact":
        B = _sensitivity(record, H_targ)
        return 2.0 * np.real(np.einsum("lij,kij->lk", controls, B))
    if method == "commutator":
        # first-order (left endpoint) quadrature of the continuous-time gradient
        psi = record.states[:-1]
        psi_T = record.final_state
        n_steps = record.num_steps
        chi = np.empty_like(psi)
        back = H_targ @ psi_T
        for k in range(n_steps - 1, -1, -1):
            back = record.step_unitaries[k].conj().T @ back
            chi[k] = back
        overlap = np.einsum("ki,lij,kj->lk", psi.conj(), controls, chi)
        return -2.0 * record.dt * np.imag(overlap)
    raise ValueError(f"unknown gradient method {method!r}")


def cost(X: Configuration, z: PulseSet, H_targ: np.ndarray, mu: float, enc: Encoding,
         gradient: bool = False, method: str = "exact") -> PulseCostReport:
    """Evaluate ``J(X, z)`` and optionally its pulse gradient."""
    if mu < 0:
        raise ValueError(f"mu must be non-negative, got {mu}")
    record, controls = _forward(X, z, enc)
    H_targ = _check_target(H_targ, controls.shape[1])
    psi_T = record.final_state
    energy = float(np.real(np.vdot(psi_T, H_targ @ psi_T)))
    regularizer = float(mu * np.sum(z.values**2) * z.dt)
    grad = None
    norm = float("nan")
    if gradient:
        grad = _energy_gradient(record, controls, H_targ, method) + 2.0 * mu * z.dt * z.values
        norm = float(np.linalg.norm(grad))
    return PulseCostReport(energy, regularizer, energy + regularizer, grad, norm)


def pulse_gradient(X: Configuration, z: PulseSet, H_targ: np.ndarray, mu: float,
                   enc: Encoding, method: str = "exact") -> np.ndarray:
    """Gradient ``dJ/dz_{l,k}`` as an ``(L, K)`` array.

    ``method="exact"`` differentiates the step propagators in closed form,
    so the result is the derivative of the discretized cost.
    ``method="commutator"`` evaluates the continuous-time commutator
    expression at the left endpoint of every step; it agrees with the exact
    one to first order in the step length.
    """
    return cost(X, z, H_targ, mu, enc, gradient=True, method=method).gradient


def optimize_pulses(
    X: Configuration,
    z0: PulseSet,
    H_targ: np.ndarray,
    mu: float,
    enc: Encoding,
    steps: int,
    rate: float = 0.01,
    *,
    clamp: bool = True,
    backtrack: bool = True,
    max_halvings: int = 20,
) -> PulseOptResult:
    """Projected gradient descent on the pulse amplitudes.

    Each step moves along the negative gradient of ``J`` taken with respect
    to the pulse *functions* (the per-step derivative divided by ``dt``),
    then clamps every amplitude into ``[-z_max, z_max]``. With
    ``backtrack`` a step that raises ``J`` is retried at half the rate
    until it does not (or ``max_halvings`` is reached); the reduced rate is
    carried forward and grows back by 10% after each accepted step, never
    beyond ``rate``.

    Returns the final pulses and the cost trace, initial value included.
    """
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    if not rate > 0:
        raise ValueError(f"rate must be positive, got {rate}")
    enc = Encoding.parse(enc)
    drift = interaction_hamiltonian(X, enc)

    def evaluate(pulses: PulseSet) -> PulseCostReport:
        record, controls = _forward(X, pulses, enc, drift)
        H = _check_target(H_targ, controls.shape[1])
        psi_T = record.final_state
        energy = float(np.real(np.vdot(psi_T, H @ psi_T)))
        reg = float(mu * np.sum(pulses.values**2) * pulses.dt)
        grad = _energy_gradient(record, controls, H, "exact") + 2.0 * mu * pulses.dt * pulses.values
        return PulseCostReport(energy, reg, energy + reg, grad, float(np.linalg.norm(grad)))

    z = z0
    report = evaluate(z)
    _check_finite(report.total, 0)
    trace = [report.total]
    current_rate = rate
    for n in range(1, steps + 1):
        direction = report.gradient / z.dt
        if not np.all(np.isfinite(direction)):
            raise NumericalFailure(f"non-finite pulse gradient at pulse step {n - 1}")
        step_rate = current_rate
        for _ in range(max_halvings + 1):
            candidate = _step(z, direction, step_rate, clamp)
            trial = evaluate(candidate)
            _check_finite(trial.total, n)
            if not backtrack or trial.total <= report.total:
                break
            step_rate *= 0.5
        z, report = candidate, trial
        trace.append(report.total)
        current_rate = min(rate, step_rate * 1.1) if backtrack else rate
    return PulseOptResult(z, trace, report.gradient_norm, current_rate)


def _step(z: PulseSet, direction: np.ndarray, rate: float, clamp: bool) -> PulseSet:
    with np.errstate(over="ignore", invalid="ignore"):
        values = z.values - rate * direction
    if not np.all(np.isfinite(values)):
        raise NumericalFailure("pulse update overflowed")
    if clamp:
        return z.with_values(values, clip=True)
    # without projection the bound is widened rather than violated
    bound = max(z.z_max, float(np.max(np.abs(values), initial=0.0)))
    return PulseSet(values, bound, z.duration)


def _check_finite(value: float, step: int) -> None:
    if not np.isfinite(value):
        raise NumericalFailure(f"non-finite cost {value} at pulse step {step}")


def pair_gradient_prefactors(X: Configuration, power: int) -> dict[tuple[int, int], np.ndarray]:
    """``p (x_i - x_j) / |x_i - x_j|^(p+2)`` for each pair ``i < j``."""
    out = {}
    for i, j in combinations(range(X.num_atoms), 2):
        diff = X.positions[i] - X.positions[j]
        out[(i, j)] = power * diff / np.linalg.norm(diff) ** (power + 2)
    return out


def position_gradient(X: Configuration, z: PulseSet, H_targ: np.ndarray,
                      enc: Encoding) -> np.ndarray:
    """Gradient of the energy term w.r.t. atom coordinates, shape ``(m, 2)``.

    Diagnostic only. Raises :class:`NumericalFailure` when close atoms make
    the gradient overflow.
    """
    enc = Encoding.parse(enc)
    record, controls = _forward(X, z, enc)
    H_targ = _check_target(H_targ, controls.shape[1])
    prefactors = pair_gradient_prefactors(X, enc.power)
    # beyond this the roundoff in dE/dcoupling is amplified past any signal
    worst = max((np.linalg.norm(v) for v in prefactors.values()), default=0.0)
    if not np.isfinite(worst) or enc.strength * worst > POSITION_GRADIENT_LIMIT:
        raise NumericalFailure(
            "position gradient overflow; atoms are too close "
            f"(min distance {np.min(X.pairwise_distances()):.3g})"
        )
    B = _sensitivity(record, H_targ).sum(axis=0)
    grad = np.zeros_like(X.positions)
    with np.errstate(over="ignore", invalid="ignore"):
        for (i, j), op in pair_operators(enc, X.num_atoms).items():
            # d/dx_i of C / r^p = -C p (x_i - x_j) / r^(p+2)
            dE_dcoupling = 2.0 * np.real(np.sum(op * B))
            contrib = -enc.strength * prefactors[(i, j)] * dE_dcoupling
            grad[i] += contrib
            grad[j] -= contrib
    if not np.all(np.isfinite(grad)) or np.max(np.abs(grad)) > POSITION_GRADIENT_LIMIT:
        raise NumericalFailure(
            "position gradient overflow; atoms are too close "
            f"(min distance {np.min(X.pairwise_distances()):.3g})"
        )
    return grad
