"""
Run configuration and end-to-end experiments behind the command line.

A run configuration is a nested mapping read from a YAML or JSON file.
Every field has a default, and the defaults reproduce the three-qubit GHZ
experiment with dipole interactions. Each command writes into a fresh
timestamped directory below ``out``.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import os
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .cbo import CboParams, CostSpec, CostVariant, RunResult, run
from .configgen import (
    BoxSampler,
    FitResult,
    candidate_density,
    estimate_density,
    fit_box,
    kl_divergence,
    pairwise_distances,
    sample_configurations,
)
from .hardware import Configuration, Encoding
from .hilbert import PauliSum, ground_energy, materialize
from .problems import (
    RandomHamiltonianSpec,
    ghz_target,
    load_pauli_sum,
    sample_random_hamiltonian,
)
from .vqoc import PulseSettings

__all__ = [
    "ConfigError",
    "DEFAULTS",
    "Problem",
    "load_config",
    "apply_override",
    "build_problem",
    "optimize",
    "pulse_only",
    "fit_baseline",
    "compare",
    "LOG10_FLOOR",
]

logger = logging.getLogger(__name__)

LOG10_FLOOR = -16.0

DEFAULTS: dict[str, Any] = {
    "problem": {
        "kind": "ghz",          # ghz | random | file
        "num_qubits": 3,
        "path": None,           # Pauli-sum JSON for kind=file
        "inclusion_prob": 0.2,
        "coeff_range": [0.0, 1.0],
        "seed": 0,              # first random problem; problem i uses seed + i
        "count": 1,             # number of random problems in compare
    },
    "encoding": "dipole",
    "cbo": {
        "alpha": 4.0, "lam": 0.4, "sigma": 0.1, "dtau": 0.5,
        "n_out": 20, "n_in": 100, "n_final": 500, "n_agents": 12,
        "noise": "componentwise", "warm_start": True,
    },
    "cost": {"variant": "log_energy_error", "nu": 0.0},
    "sampler": {"r_min": 1.0, "r_max": 2.5},
    "pulse": {
        "steps": 100, "duration": 1.0, "mu": 0.0, "rate": 10.0,
        "z_max": 20.0, "init_amplitude": 10.0,
    },
    "fit": {
        "r_min_grid": [0.2, 2.0, 20],
        "r_max_grid": [0.5, 4.0, 20],
        "n_distances": 20000,
        "n_samples": None,      # baseline configurations; defaults to n_agents
    },
    "configs": None,            # configuration file for pulse-only
    "runs": 5,                  # seeds per problem in compare
    "seed": 0,
    "out": "runs",
    "workers": None,            # None uses every core
}


class ConfigError(ValueError):
    """Invalid run configuration or command-line input."""


# -- configuration ---------------------------------------------------------

def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config field {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config field {where!r} must be a mapping")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, updated by the file at ``path`` and then by ``overrides``."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        cfg = _merge(cfg, data)
    for key, value in (overrides or {}).items():
        cfg = apply_override(cfg, key, value)
    validate(cfg)
    return cfg


def apply_override(cfg: dict, dotted: str, value: Any) -> dict:
    """Set ``cfg[a][b] = value`` for ``dotted = "a.b"``; strings are parsed as YAML."""
    if isinstance(value, str):
        try:
            value = yaml.safe_load(value)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse value for {dotted!r}: {exc}") from exc
    update: dict = {}
    node = update
    keys = dotted.split(".")
    for key in keys[:-1]:
        node[key] = {}
        node = node[key]
    node[keys[-1]] = value
    return _merge(cfg, update)


def validate(cfg: dict) -> None:
    """Raise :class:`ConfigError` for out-of-range fields and missing files."""
    try:
        Encoding.parse(cfg["encoding"])
        cbo_params(cfg)
        pulse_settings(cfg)
        CostVariant(cfg["cost"]["variant"])
        BoxSampler(float(cfg["sampler"]["r_max"]), float(cfg["sampler"]["r_min"]),
                   int(cfg["problem"]["num_qubits"]))
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg["cost"]["nu"] < 0:
        raise ConfigError("cost.nu must be >= 0")
    prob = cfg["problem"]
    if prob["kind"] not in ("ghz", "random", "file"):
        raise ConfigError(f"problem.kind must be ghz, random or file, got {prob['kind']!r}")
    if prob["kind"] == "file":
        if not prob["path"] or not Path(prob["path"]).is_file():
            raise ConfigError(f"problem.path {prob['path']!r} does not exist")
    if prob["kind"] == "ghz" and prob["num_qubits"] < 2:
        raise ConfigError("the GHZ problem needs num_qubits >= 2")
    if not 0 < prob["inclusion_prob"] <= 1:
        raise ConfigError("problem.inclusion_prob must lie in (0, 1]")
    if int(prob["count"]) < 1 or int(cfg["runs"]) < 1:
        raise ConfigError("problem.count and runs must be >= 1")
    if cfg["configs"] is not None and not Path(cfg["configs"]).is_file():
        raise ConfigError(f"configs file {cfg['configs']!r} does not exist")
    if cfg["workers"] is not None and int(cfg["workers"]) < 1:
        raise ConfigError("workers must be >= 1")


def cbo_params(cfg: dict) -> CboParams:
    return CboParams(**cfg["cbo"])


def pulse_settings(cfg: dict) -> PulseSettings:
    p = cfg["pulse"]
    return PulseSettings(num_steps=int(p["steps"]), duration=float(p["duration"]),
                         mu=float(p["mu"]), rate=float(p["rate"]), z_max=float(p["z_max"]),
                         init_amplitude=float(p["init_amplitude"]))


def sampler(cfg: dict, m: int) -> BoxSampler:
    return BoxSampler(float(cfg["sampler"]["r_max"]), float(cfg["sampler"]["r_min"]), m)


def workers(cfg: dict) -> int:
    return int(cfg["workers"]) if cfg["workers"] is not None else (os.cpu_count() or 1)


# -- problems --------------------------------------------------------------

@dataclass(frozen=True)
class Problem:
    name: str
    num_qubits: int
    H: np.ndarray
    ground_energy: float
    pauli: PauliSum | None = None


def build_problem(cfg: dict, index: int = 0) -> Problem:
    """Target of ``cfg``; ``index`` selects among random problems."""
    enc = Encoding.parse(cfg["encoding"])
    prob = cfg["problem"]
    if prob["kind"] == "ghz":
        m = int(prob["num_qubits"])
        H = ghz_target(m)
        if enc.local_dim != 2:
            raise ConfigError("the GHZ target is defined for two-level encodings only")
        return Problem(f"ghz{m}", m, H, -1.0)
    if prob["kind"] == "random":
        seed = int(prob["seed"]) + index
        spec = RandomHamiltonianSpec(int(prob["num_qubits"]), float(prob["inclusion_prob"]),
                                     tuple(prob["coeff_range"]), seed)
        pauli = sample_random_hamiltonian(spec)
        name = f"random{spec.num_qubits}-{seed}"
    else:
        pauli = load_pauli_sum(prob["path"])
        name = Path(prob["path"]).stem
    H = materialize(pauli, enc.local_dim)
    return Problem(name, pauli.num_qubits, H, ground_energy(H)[0], pauli)


def cost_spec(cfg: dict, problem: Problem) -> CostSpec:
    variant = CostVariant(cfg["cost"]["variant"])
    return CostSpec(variant, problem.ground_energy, float(cfg["cost"]["nu"]))


def log10_error(J: float, e_g: float) -> float:
    gap = J - e_g
    return LOG10_FLOOR if gap <= 10**LOG10_FLOOR else max(LOG10_FLOOR, math.log10(gap))


# -- output ----------------------------------------------------------------

def run_directory(out, command: str) -> Path:
    """Fresh ``out/<command>-<timestamp>`` directory; never reuses an existing one."""
    base = Path(out)
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    path = base / f"{command}-{stamp}"
    suffix = 1
    while path.exists():
        path = base / f"{command}-{stamp}-{suffix}"
        suffix += 1
    path.mkdir(parents=True)
    return path


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=1) + "\n")


def _write_run(directory: Path, cfg: dict, problem: Problem, result: RunResult,
               seed: int) -> dict:
    agents = result.ensemble.agents
    errors = [a.J - problem.ground_energy for a in agents]
    best = int(np.argmin(errors))
    _write_json(directory / "final_configs.json",
                [a.config.to_dict() for a in agents])
    _write_json(directory / "pulses.json", [a.pulses.to_dict() for a in agents])
    with open(directory / "traces.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["agent", "step", "J", "energy_error"])
        for k, trace in enumerate(result.final_traces):
            for step, J in enumerate(trace):
                writer.writerow([k, step, repr(J), repr(J - problem.ground_energy)])
    summary = {
        "problem": problem.name,
        "encoding": Encoding.parse(cfg["encoding"]).value,
        "ground_energy": problem.ground_energy,
        "seed": seed,
        "energy_errors": errors,
        "log10_errors": [log10_error(a.J, problem.ground_energy) for a in agents],
        "best_agent": best,
        "best_error": errors[best],
        "diameters": result.diameters,
    }
    _write_json(directory / "summary.json", summary)
    _write_json(directory / "config.json", cfg)
    return summary


class _HistoryWriter:
    def __init__(self, path: Path):
        self.fh = open(path, "w")

    def __call__(self, snap: dict) -> None:
        self.fh.write(json.dumps(snap) + "\n")
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


# -- commands --------------------------------------------------------------

def _seeds(seed: int) -> tuple[np.random.SeedSequence, int]:
    # one stream for initial configurations, one root seed for the run
    init_seq, run_seq = np.random.SeedSequence(seed).spawn(2)
    return init_seq, int(run_seq.generate_state(1)[0])


def _initial_configs(cfg: dict, m: int, seed: int) -> list[Configuration]:
    init_seq, _ = _seeds(seed)
    K = int(cfg["cbo"]["n_agents"])
    X = sample_configurations(sampler(cfg, m), K, np.random.default_rng(init_seq))
    return [Configuration(x) for x in X]


def _run(cfg: dict, problem: Problem, init: list[Configuration], params: CboParams,
         seed: int, history_path: Path | None = None) -> RunResult:
    _, run_seed = _seeds(seed)
    writer = _HistoryWriter(history_path) if history_path is not None else None
    try:
        return run(problem.H, Encoding.parse(cfg["encoding"]), init, params,
                   cost_spec(cfg, problem), seed=run_seed, settings=pulse_settings(cfg),
                   workers=workers(cfg), callback=writer)
    finally:
        if writer is not None:
            writer.close()


def optimize(cfg: dict) -> Path:
    """Full nested optimization; returns the run directory."""
    problem = build_problem(cfg)
    seed = int(cfg["seed"])
    directory = run_directory(cfg["out"], "optimize")
    init = _initial_configs(cfg, problem.num_qubits, seed)
    result = _run(cfg, problem, init, cbo_params(cfg), seed, directory / "history.jsonl")
    _write_run(directory, cfg, problem, result, seed)
    return directory


def load_configurations(path) -> list[Configuration]:
    """A single configuration or a list of them from JSON."""
    data = json.loads(Path(path).read_text())
    items = data if isinstance(data, list) else [data]
    try:
        return [Configuration.from_dict(d) if isinstance(d, dict) else Configuration(d)
                for d in items]
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def pulse_only(cfg: dict) -> Path:
    """Pulse optimization at fixed positions (``n_out = 0``)."""
    problem = build_problem(cfg)
    seed = int(cfg["seed"])
    if cfg["configs"] is not None:
        init = load_configurations(cfg["configs"])
    else:
        init = _initial_configs(cfg, problem.num_qubits, seed)
    if any(c.num_atoms != problem.num_qubits for c in init):
        raise ConfigError("configuration atom count does not match the problem")
    params = CboParams(**{**cfg["cbo"], "n_out": 0, "n_agents": len(init)})
    directory = run_directory(cfg["out"], "pulse-only")
    result = _run(cfg, problem, init, params, seed, directory / "history.jsonl")
    _write_run(directory, cfg, problem, result, seed)
    return directory


def _grid(spec) -> np.ndarray:
    lo, hi, n = spec
    return np.linspace(float(lo), float(hi), int(n))


def _fit(cfg: dict, configs: list[Configuration], seed: int) -> tuple[FitResult, np.ndarray]:
    m = configs[0].num_atoms
    distances = pairwise_distances(np.stack([c.positions for c in configs]))
    distances = distances[distances > 0]
    target = estimate_density(distances)
    fit = cfg["fit"]
    result = fit_box(target, m, _grid(fit["r_min_grid"]), _grid(fit["r_max_grid"]),
                     int(fit["n_distances"]), seed)
    return result, distances


def fit_baseline(cfg: dict, history_dirs: list) -> Path:
    """Fit a box sampler to pooled final configurations and draw baselines."""
    configs: list[Configuration] = []
    for d in history_dirs:
        path = Path(d) / "final_configs.json"
        if not path.is_file():
            raise ConfigError(f"{d} holds no final_configs.json")
        configs.extend(load_configurations(path))
    if not configs:
        raise ConfigError("no final configurations found")
    seed = int(cfg["seed"])
    result, distances = _fit(cfg, configs, seed)
    m = configs[0].num_atoms
    target = estimate_density(distances)
    default_q = candidate_density(target, sampler(cfg, m), int(cfg["fit"]["n_distances"]), seed)
    n = int(cfg["fit"]["n_samples"] or cfg["cbo"]["n_agents"])
    _, base_seq = np.random.SeedSequence(seed).spawn(2)
    baselines = sample_configurations(result.sampler, n, np.random.default_rng(base_seq))
    directory = run_directory(cfg["out"], "fit-baseline")
    _write_json(directory / "fit.json", {
        **result.to_dict(),
        "pooled_distances": int(distances.size),
        "default_kl": kl_divergence(target.density, default_q, target.grid),
        "sources": [str(d) for d in history_dirs],
    })
    _write_json(directory / "baselines.json",
                [Configuration(x).to_dict() for x in baselines])
    target.to_csv(directory / "density.csv")
    return directory


def _final_errors(cfg: dict, problem: Problem, configs: list[Configuration],
                  seed: int) -> list[float]:
    params = CboParams(**{**cfg["cbo"], "n_out": 0, "n_agents": len(configs)})
    result = _run(cfg, problem, configs, params, seed)
    return [log10_error(a.J, problem.ground_energy) for a in result.ensemble.agents]


def compare(cfg: dict, on_row=None) -> Path:
    """Initial, fitted and final arms over ``runs`` seeds and ``problem.count`` problems.

    For every (problem, seed) a full optimization is run; the box sampler
    fitted to its final configurations provides the fitted arm and the run's
    own initial configurations provide the initial arm. Both baselines get
    ``n_final`` pulse steps at fixed positions.
    """
    count = int(cfg["problem"]["count"]) if cfg["problem"]["kind"] == "random" else 1
    directory = run_directory(cfg["out"], "compare")
    _write_json(directory / "config.json", cfg)
    rows = []
    with open(directory / "comparison.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["problem", "seed", "arm", "agent", "log10_error"])
        for index in range(count):
            problem = build_problem(cfg, index)
            for r in range(int(cfg["runs"])):
                seed = int(cfg["seed"]) + r
                init = _initial_configs(cfg, problem.num_qubits, seed)
                result = _run(cfg, problem, init, cbo_params(cfg), seed)
                finals = [a.config for a in result.ensemble.agents]
                fit, _ = _fit(cfg, finals, seed)
                _, base_seq = np.random.SeedSequence(seed).spawn(2)
                fitted = [Configuration(x) for x in sample_configurations(
                    fit.sampler, len(init), np.random.default_rng(base_seq))]
                arms = {
                    "initial": _final_errors(cfg, problem, init, seed),
                    "fitted": _final_errors(cfg, problem, fitted, seed),
                    "final": [log10_error(a.J, problem.ground_energy)
                              for a in result.ensemble.agents],
                }
                for arm, errs in arms.items():
                    for k, e in enumerate(errs):
                        row = (problem.name, seed, arm, k, e)
                        writer.writerow(row)
                        rows.append(row)
                fh.flush()
                logger.info("%s seed %d: median log10 error initial %.2f fitted %.2f final %.2f",
                            problem.name, seed, *(np.median(arms[a]) for a in arms))
                if on_row is not None:
                    on_row(problem.name, seed, arms)
    return directory
