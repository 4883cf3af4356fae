"""
Command-line entry point.

Every command reads the optional ``--config`` file (YAML or JSON), applies
``--set key.path=value`` overrides and the common ``--seed``, ``--out`` and
``--workers`` flags, and writes its results into a fresh directory. Exit
codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments
from .experiments import ConfigError
from .hardware import Encoding
from .hilbert import ground_energy, materialize
from .problems import (
    PauliFileError,
    RandomHamiltonianSpec,
    load_pauli_sum,
    sample_random_hamiltonian,
    save_pauli_sum,
)
from .vqoc import NumericalFailure

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML or JSON run configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field, e.g. cbo.alpha=40 (repeatable)")
    p.add_argument("--seed", type=int, help="root seed")
    p.add_argument("--out", help="parent directory for run outputs")
    p.add_argument("--workers", type=int, help="worker processes (default: all cores)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="atomcbo", description="Atom-position and pulse optimization for neutral atoms.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="full nested position and pulse optimization")
    _common(p)

    p = sub.add_parser("pulse-only", help="pulse optimization at fixed positions")
    _common(p)
    p.add_argument("--configs", help="JSON file with one configuration or a list of them")

    p = sub.add_parser("fit-baseline", help="fit a box sampler to final configurations")
    _common(p)
    p.add_argument("history_dirs", nargs="+", help="run directories with final_configs.json")
    p.add_argument("--n-samples", type=int, help="number of baseline configurations")

    p = sub.add_parser("compare", help="initial, fitted and final arms over several seeds")
    _common(p)
    p.add_argument("--runs", type=int, help="seeds per problem")

    p = sub.add_parser("gen-hamiltonian", help="sample a random Pauli-sum Hamiltonian")
    _common(p)
    p.add_argument("--num-qubits", type=int, default=3)
    p.add_argument("--inclusion-prob", type=float, default=0.2)

    p = sub.add_parser("eigs", help="exact ground energy of a Pauli-sum file")
    _common(p)
    p.add_argument("path", type=Path)
    p.add_argument("--encoding", default="dipole",
                   help="encoding whose local dimension is used (default: dipole)")
    return parser


def _config(args) -> dict:
    overrides = {}
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value
    for flag in ("seed", "out", "workers"):
        if getattr(args, flag) is not None:
            overrides[flag] = getattr(args, flag)
    if getattr(args, "configs", None) is not None:
        overrides["configs"] = args.configs
    if getattr(args, "runs", None) is not None:
        overrides["runs"] = args.runs
    if getattr(args, "n_samples", None) is not None:
        overrides["fit.n_samples"] = args.n_samples
    return experiments.load_config(args.config, overrides)


def _report(directory: Path) -> None:
    print(json.dumps({"status": "ok", "directory": str(directory)}))


def cmd_gen_hamiltonian(args, cfg: dict) -> None:
    spec = RandomHamiltonianSpec(args.num_qubits, args.inclusion_prob, seed=cfg["seed"])
    p = sample_random_hamiltonian(spec)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"random{spec.num_qubits}-{spec.seed}.json"
    save_pauli_sum(p, path)
    print(json.dumps({"status": "ok", "path": str(path), "terms": len(p.terms)}))


def cmd_eigs(args, cfg: dict) -> None:
    enc = Encoding.parse(args.encoding)
    p = load_pauli_sum(args.path)
    H = materialize(p, enc.local_dim)
    e_g, _ = ground_energy(H)
    spectrum = np.linalg.eigvalsh(H)
    print(json.dumps({"path": str(args.path), "num_qubits": p.num_qubits,
                      "ground_energy": e_g, "gap": float(spectrum[1] - spectrum[0])
                      if spectrum.size > 1 else None}))


def dispatch(args, cfg: dict) -> None:
    if args.command == "optimize":
        _report(experiments.optimize(cfg))
    elif args.command == "pulse-only":
        _report(experiments.pulse_only(cfg))
    elif args.command == "fit-baseline":
        _report(experiments.fit_baseline(cfg, args.history_dirs))
    elif args.command == "compare":
        _report(experiments.compare(cfg))
    elif args.command == "gen-hamiltonian":
        cmd_gen_hamiltonian(args, cfg)
    elif args.command == "eigs":
        cmd_eigs(args, cfg)


def _fail(kind: str, exc: BaseException, code: int) -> int:
    record = {"status": "error", "kind": kind, "type": type(exc).__name__, "message": str(exc)}
    print(json.dumps(record), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        dispatch(args, cfg)
    except (ConfigError, PauliFileError, FileNotFoundError, json.JSONDecodeError) as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except (NumericalFailure, np.linalg.LinAlgError, FloatingPointError) as exc:
        return _fail("numerical", exc, EXIT_NUMERICAL)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
