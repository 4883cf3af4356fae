"""
Consensus-based optimization of atom configurations.

Each agent carries a configuration and its own pulses. An outer iteration
partially optimizes every agent's pulses, turns the reached cost into a
fitness ``f``, forms the exponentially weighted consensus configuration
and moves every agent towards it with multiplicative noise:

    X <- X - lam (X - v_f) dtau + sqrt(2) sigma |X - v_f| N sqrt(dtau)
"""

from __future__ import annotations

import enum
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .hardware import Configuration, Encoding, PulseSet
from .vqoc import NumericalFailure, PulseOptResult, PulseSettings, optimize_pulses

__all__ = [
    "CboParams",
    "CostVariant",
    "CostSpec",
    "Agent",
    "AgentEnsemble",
    "RunResult",
    "agent_cost",
    "weighted_mean",
    "consensus_point",
    "cbo_step",
    "diameter",
    "run",
]

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class CboParams:
    """Hyperparameters of the outer consensus loop.

    ``noise`` is ``"componentwise"`` (each coordinate scaled by its own
    deviation from the consensus point) or ``"isotropic"`` (every
    coordinate of an agent scaled by the norm of its full deviation).
    """

    alpha: float = 4.0
    lam: float = 0.4
    sigma: float = 0.1
    dtau: float = 0.5
    n_out: int = 20
    n_in: int = 100
    n_final: int = 500
    n_agents: int = 12
    noise: str = "componentwise"
    warm_start: bool = True

    def __post_init__(self):
        if not (self.alpha > 0 and self.lam > 0 and self.sigma >= 0 and self.dtau > 0):
            raise ValueError("require alpha > 0, lam > 0, sigma >= 0, dtau > 0")
        if self.n_out < 0 or self.n_in < 0 or self.n_final < 0 or self.n_agents < 1:
            raise ValueError("iteration counts must be >= 0 and n_agents >= 1")
        if self.noise not in ("componentwise", "isotropic"):
            raise ValueError(f"unknown noise model {self.noise!r}")


class CostVariant(str, enum.Enum):
    LOG_ENERGY_ERROR = "log_energy_error"
    RAW_ENERGY = "raw_energy"
    GRADIENT_REGULARIZED = "gradient_regularized"


@dataclass(frozen=True)
class CostSpec:
    variant: CostVariant = CostVariant.LOG_ENERGY_ERROR
    ground_energy: float | None = None
    nu: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "variant", CostVariant(self.variant))
        if self.variant is CostVariant.LOG_ENERGY_ERROR:
            if self.ground_energy is None or not math.isfinite(self.ground_energy):
                raise ValueError("LOG_ENERGY_ERROR needs a finite ground energy")
        if self.nu < 0:
            raise ValueError("nu must be non-negative")

    @property
    def needs_gradient(self) -> bool:
        return self.variant is CostVariant.GRADIENT_REGULARIZED


def agent_cost(J_value: float, grad_norm: float, spec: CostSpec) -> float:
    """Fitness of an agent; lower is better.

    The log-error variant returns ``log(J - E_g)`` so that, like the other
    variants, it decreases as the agent improves. An energy at or below the ground energy
    (numerical undershoot) is floored at ``1e-12`` with a ``RuntimeWarning``.
    """
    if spec.variant is CostVariant.RAW_ENERGY:
        return float(J_value)
    if spec.variant is CostVariant.GRADIENT_REGULARIZED:
        return float(J_value - spec.nu * grad_norm)
    gap = J_value - spec.ground_energy
    if gap < LOG_FLOOR:
        warnings.warn("energy undershoots the ground energy; log argument floored at 1e-12",
                      RuntimeWarning, stacklevel=2)
        gap = LOG_FLOOR
    return math.log(gap)


@dataclass(frozen=True)
class Agent:
    config: Configuration
    pulses: PulseSet
    f: float = math.nan
    J: float = math.nan
    grad_norm: float = math.nan
    trace: tuple[float, ...] = ()


@dataclass(frozen=True)
class AgentEnsemble:
    agents: tuple[Agent, ...]
    rngs: tuple[np.random.Generator, ...]
    n: int = 0

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "rngs", tuple(self.rngs))
        if len(self.rngs) != len(self.agents):
            raise ValueError("need one RNG per agent")
        shapes = {a.config.positions.shape for a in self.agents}
        grids = {a.pulses.values.shape for a in self.agents}
        if len(shapes) > 1 or len(grids) > 1:
            raise ValueError("agents must share atom count and pulse grid")

    @property
    def size(self) -> int:
        return len(self.agents)

    @property
    def positions(self) -> np.ndarray:
        return np.stack([a.config.positions for a in self.agents])

    @property
    def f(self) -> np.ndarray:
        return np.array([a.f for a in self.agents])

    @property
    def J(self) -> np.ndarray:
        return np.array([a.J for a in self.agents])

    @classmethod
    def create(cls, configs: Sequence[Configuration], pulses: Sequence[PulseSet],
               seed: int | np.random.SeedSequence | None = None) -> "AgentEnsemble":
        """One independent generator per agent, spawned from ``seed``."""
        if len(configs) != len(pulses):
            raise ValueError("need one pulse set per configuration")
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        rngs = [np.random.default_rng(s) for s in ss.spawn(len(configs))]
        return cls(tuple(Agent(c, z) for c, z in zip(configs, pulses)), tuple(rngs))


def weighted_mean(positions: np.ndarray, f: np.ndarray, alpha: float) -> np.ndarray:
    """Average of ``positions`` (axis 0) with weights ``exp(-alpha f)``.

    The minimum of ``f`` is subtracted first; this leaves the normalized
    weights unchanged and keeps the best agent's weight at exactly 1.
    """
    positions = np.asarray(positions, dtype=float)
    f = np.asarray(f, dtype=float)
    if positions.shape[0] == 0:
        raise ValueError("consensus point of an empty ensemble")
    if not np.all(np.isfinite(f)):
        raise ValueError("agent costs must be finite")
    w = np.exp(-alpha * (f - f.min()))
    w /= w.sum()
    return np.tensordot(w, positions, axes=1)


def consensus_point(ensemble: AgentEnsemble, alpha: float) -> Configuration:
    v = weighted_mean(ensemble.positions, ensemble.f, alpha)
    return _unchecked_config(v)


def _unchecked_config(positions: np.ndarray) -> Configuration:
    # the consensus point may collapse atoms (e.g. symmetric agents); it is
    # a target for the update, never simulated
    try:
        return Configuration(positions)
    except ValueError:
        cfg = object.__new__(Configuration)
        pos = np.array(positions, dtype=float)
        pos.setflags(write=False)
        object.__setattr__(cfg, "positions", pos)
        return cfg


def cbo_step(ensemble: AgentEnsemble, v_f: Configuration, params: CboParams,
             rng: np.random.Generator | None = None) -> AgentEnsemble:
    """One discretized consensus update of every agent's positions.

    Noise is drawn from each agent's own generator unless a shared ``rng``
    is given. Pulses, costs and traces are carried over unchanged.
    """
    lam_dt = params.lam * params.dtau
    if lam_dt >= 1:
        warnings.warn(f"lam * dtau = {lam_dt} >= 1: drift overshoots the consensus point",
                      RuntimeWarning, stacklevel=2)
    v = np.asarray(v_f.positions)
    new_agents = []
    for k, agent in enumerate(ensemble.agents):
        gen = rng if rng is not None else ensemble.rngs[k]
        X = agent.config.positions
        dev = X - v
        noise = gen.standard_normal(X.shape)
        if params.noise == "componentwise":
            scale = np.abs(dev)
        else:
            scale = np.linalg.norm(dev)
        X_new = X - params.lam * dev * params.dtau \
            + math.sqrt(2.0) * params.sigma * scale * noise * math.sqrt(params.dtau)
        new_agents.append(replace(agent, config=_unchecked_config(X_new)))
    return AgentEnsemble(tuple(new_agents), ensemble.rngs, ensemble.n + 1)


def diameter(positions: np.ndarray) -> float:
    """Largest Frobenius distance between two agents' configurations."""
    positions = np.asarray(positions, dtype=float)
    flat = positions.reshape(positions.shape[0], -1)
    diff = flat[:, None, :] - flat[None, :, :]
    return float(np.sqrt(np.max(np.sum(diff**2, axis=-1))))


@dataclass
class RunResult:
    ensemble: AgentEnsemble
    history: list[dict]
    final_traces: list[list[float]] = field(default_factory=list)

    @property
    def diameters(self) -> list[float]:
        return [diameter([a["positions"] for a in snap["agents"]]) for snap in self.history]

    @property
    def best_error(self) -> float:
        return min(a.J for a in self.ensemble.agents)


def _optimize_task(args) -> PulseOptResult:
    X, z, H_targ, settings, enc, steps = args
    return optimize_pulses(X, z, H_targ, settings.mu, enc, steps, settings.rate,
                           clamp=settings.clamp, backtrack=settings.backtrack)


def _map(tasks: list, workers: int | None, executor) -> list:
    if executor is not None:
        return list(executor.map(_optimize_task, tasks))
    return [_optimize_task(t) for t in tasks]


def _snapshot(n: int, ensemble: AgentEnsemble, v_f: np.ndarray) -> dict:
    return {
        "n": n,
        "agents": [
            {"positions": a.config.positions.tolist(), "f": float(a.f), "J": float(a.J)}
            for a in ensemble.agents
        ],
        "v_f": np.asarray(v_f).tolist(),
    }


def _evaluate(ensemble: AgentEnsemble, steps: int, H_targ: np.ndarray, enc: Encoding,
              settings: PulseSettings, spec: CostSpec, n: int, executor,
              initial_pulses: Sequence[PulseSet] | None = None) -> AgentEnsemble:
    starts = initial_pulses if initial_pulses is not None else [a.pulses for a in ensemble.agents]
    tasks = [(a.config, z, H_targ, settings, enc, steps) for a, z in zip(ensemble.agents, starts)]
    try:
        results = _map(tasks, None, executor)
    except (NumericalFailure, ValueError, ArithmeticError) as exc:
        raise NumericalFailure(f"agent evaluation failed at outer iteration {n}: {exc}") from exc
    agents = []
    for a, res in zip(ensemble.agents, results):
        J = res.trace[-1]
        f = agent_cost(J, res.gradient_norm, spec)
        if not math.isfinite(f):
            raise NumericalFailure(f"non-finite agent cost at outer iteration {n}")
        agents.append(replace(a, pulses=res.pulses, f=f, J=J, grad_norm=res.gradient_norm,
                              trace=tuple(res.trace)))
    return AgentEnsemble(tuple(agents), ensemble.rngs, ensemble.n)


def run(
    H_targ: np.ndarray,
    enc: Encoding,
    init: Sequence[Configuration],
    params: CboParams = CboParams(),
    spec: CostSpec | None = None,
    seed: int | None = None,
    settings: PulseSettings = PulseSettings(),
    initial_pulses: Sequence[PulseSet] | None = None,
    workers: int | None = 1,
    callback: Callable[[dict], None] | None = None,
) -> RunResult:
    """Nested configuration and pulse optimization.

    For ``n = 0 .. n_out - 1`` every agent runs ``n_in`` pulse steps from
    its current pulses (or from its initial pulses when
    ``params.warm_start`` is false), costs are turned into fitness values,
    the consensus point is formed, a snapshot is recorded and positions are
    updated. Afterwards every agent runs ``n_final`` pulse steps at its
    final position and a last snapshot ``n = n_out`` is recorded, so the
    history always holds ``n_out + 1`` entries.

    Parameters
    ----------
    H_targ : ndarray
        Dense target Hamiltonian on the encoding's state space.
    init : sequence of Configuration
        One starting configuration per agent.
    spec : CostSpec, optional
        Defaults to the raw energy.
    seed : int, optional
        Root seed; every agent gets its own spawned generator for its
        initial pulses and its noise.
    initial_pulses : sequence of PulseSet, optional
        Overrides the random initial pulses.
    workers : int, optional
        Number of processes for agent evaluations; 1 runs in-process,
        ``None`` uses all cores.
    callback : callable, optional
        Called with each history snapshot as soon as it is recorded.
    """
    enc = Encoding.parse(enc)
    spec = spec or CostSpec(CostVariant.RAW_ENERGY)
    init = list(init)
    if not init:
        raise ValueError("need at least one initial configuration")
    m = init[0].num_atoms
    n_channels = enc.num_channels(m)
    root = np.random.SeedSequence(seed)
    pulse_seq, agent_seq = root.spawn(2)
    if initial_pulses is None:
        initial_pulses = [settings.initial_pulses(n_channels, np.random.default_rng(s))
                          for s in pulse_seq.spawn(len(init))]
    initial_pulses = list(initial_pulses)
    ensemble = AgentEnsemble.create(init, initial_pulses, agent_seq)

    if workers is None:
        workers = os.cpu_count() or 1
    executor = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    history: list[dict] = []

    def record(snap: dict) -> None:
        history.append(snap)
        if callback is not None:
            callback(snap)

    try:
        for n in range(params.n_out):
            starts = None if params.warm_start else initial_pulses
            ensemble = _evaluate(ensemble, params.n_in, H_targ, enc, settings, spec, n,
                                 executor, starts)
            v_f = consensus_point(ensemble, params.alpha)
            record(_snapshot(n, ensemble, v_f.positions))
            logger.info("outer %d: best f %.4g, diameter %.4g", n, ensemble.f.min(),
                        diameter(ensemble.positions))
            ensemble = cbo_step(ensemble, v_f, params)
        ensemble = _evaluate(ensemble, params.n_final, H_targ, enc, settings, spec,
                             params.n_out, executor)
        v_f = consensus_point(ensemble, params.alpha)
        record(_snapshot(params.n_out, ensemble, v_f.positions))
    finally:
        if executor is not None:
            executor.shutdown()
    return RunResult(ensemble, history, [list(a.trace) for a in ensemble.agents])
