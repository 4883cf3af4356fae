import csv
import json
from pathlib import Path

import numpy as np
import pytest

from atomcbo import experiments
from atomcbo.cli import main
from atomcbo.hardware import Configuration, Encoding
from atomcbo.problems import ghz_target
from atomcbo.vqoc import PulseSettings, optimize_pulses

FIXTURES = Path(__file__).parent / "fixtures"
SMALL = ["--set", "cbo.n_out=2", "--set", "cbo.n_in=3", "--set", "cbo.n_final=4",
         "--set", "cbo.n_agents=3", "--set", "pulse.steps=20", "--workers", "1"]


def last_json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def run_cli(capsys, *argv):
    code = main(list(argv))
    assert code == 0
    return Path(last_json(capsys)["directory"])


class TestConfig:
    def test_defaults_reproduce_ghz(self):
        cfg = experiments.load_config()
        assert cfg["problem"]["kind"] == "ghz" and cfg["problem"]["num_qubits"] == 3
        assert cfg["encoding"] == "dipole"
        assert (cfg["cbo"]["alpha"], cfg["cbo"]["lam"], cfg["cbo"]["sigma"],
                cfg["cbo"]["dtau"]) == (4.0, 0.4, 0.1, 0.5)
        assert cfg["cbo"]["n_agents"] == 12 and cfg["cbo"]["n_out"] == 20

    def test_yaml_file_and_override(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("cbo:\n  alpha: 10\nencoding: gr\n")
        cfg = experiments.load_config(path, {"cbo.sigma": "0.3"})
        assert cfg["cbo"]["alpha"] == 10 and cfg["cbo"]["sigma"] == 0.3
        assert cfg["cbo"]["lam"] == 0.4

    def test_json_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"pulse": {"mu": 0.001}}))
        assert experiments.load_config(path)["pulse"]["mu"] == 0.001

    @pytest.mark.parametrize("override", [
        {"cbo.alpha": "-1"}, {"bogus": "1"}, {"encoding": "ising"},
        {"problem.kind": "file"}, {"sampler.r_min": "100"}, {"cbo": "3"},
    ])
    def test_invalid(self, override):
        with pytest.raises(experiments.ConfigError):
            experiments.load_config(None, override)

    def test_missing_file(self, tmp_path):
        with pytest.raises(experiments.ConfigError):
            experiments.load_config(tmp_path / "nope.yaml")


class TestExitCodes:
    def test_config_error(self, capsys):
        assert main(["optimize", "--set", "cbo.alpha=0"]) == 2
        record = json.loads(capsys.readouterr().err.strip())
        assert record["kind"] == "config"

    def test_malformed_set(self, capsys):
        assert main(["optimize", "--set", "novalue"]) == 2

    def test_bad_pauli_file(self, capsys, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{nope")
        assert main(["eigs", str(path)]) == 2

    def test_numerical_failure(self, capsys, tmp_path):
        # coefficients near the float limit overflow the pulse gradient
        h = tmp_path / "big.json"
        h.write_text(json.dumps({"num_qubits": 1, "terms": [{"coeff": 1e308, "pauli": "X"},
                                                            {"coeff": 1e308, "pauli": "Z"}]}))
        code = main(["pulse-only", "--out", str(tmp_path), "--set", "problem.kind=file",
                     "--set", f"problem.path={h}", "--set", "problem.num_qubits=1", *SMALL])
        assert code == 3
        assert json.loads(capsys.readouterr().err.strip())["kind"] == "numerical"


class TestOptimize:
    def test_outputs(self, capsys, tmp_path):
        d = run_cli(capsys, "optimize", "--out", str(tmp_path), "--seed", "4", *SMALL)
        history = [json.loads(l) for l in (d / "history.jsonl").read_text().splitlines()]
        assert [h["n"] for h in history] == [0, 1, 2]
        summary = json.loads((d / "summary.json").read_text())
        assert len(summary["energy_errors"]) == 3
        finals = json.loads((d / "final_configs.json").read_text())
        assert len(finals) == 3
        with open(d / "traces.csv") as fh:
            rows = list(csv.DictReader(fh))
        last = {}
        for r in rows:
            last[int(r["agent"])] = float(r["energy_error"])
        assert summary["best_error"] == min(last.values())
        assert summary["best_error"] == min(summary["energy_errors"])

    def test_same_seed_same_summary(self, capsys, tmp_path):
        a = run_cli(capsys, "optimize", "--out", str(tmp_path), "--seed", "9", *SMALL)
        b = run_cli(capsys, "optimize", "--out", str(tmp_path), "--seed", "9", *SMALL)
        assert a != b
        assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()

    def test_file_problem(self, capsys, tmp_path):
        h = tmp_path / "h.json"
        h.write_text((FIXTURES / "lih_style_4q.json").read_text())
        d = run_cli(capsys, "optimize", "--out", str(tmp_path), "--set", "problem.kind=file",
                    "--set", f"problem.path={h}", "--set", "problem.num_qubits=4", *SMALL)
        summary = json.loads((d / "summary.json").read_text())
        assert all(e >= -1e-9 for e in summary["energy_errors"])


def test_pulse_only_matches_direct_call(capsys, tmp_path):
    X = Configuration([[0, 0], [0.7, 0], [0.35, 0.6]])
    cfgs = tmp_path / "x.json"
    cfgs.write_text(json.dumps(X.to_dict()))
    d = run_cli(capsys, "pulse-only", "--out", str(tmp_path), "--configs", str(cfgs),
                "--seed", "2", *SMALL)
    history = (d / "history.jsonl").read_text().splitlines()
    assert len(history) == 1
    summary = json.loads((d / "summary.json").read_text())

    # rebuild the same initial pulses the run uses
    cfg = experiments.load_config(None, {"seed": 2, "pulse.steps": 20})
    _, run_seed = experiments._seeds(2)
    pulse_seq, _ = np.random.SeedSequence(run_seed).spawn(2)
    settings = PulseSettings(num_steps=20, mu=cfg["pulse"]["mu"])
    z0 = settings.initial_pulses(6, np.random.default_rng(pulse_seq.spawn(1)[0]))
    res = optimize_pulses(X, z0, ghz_target(3), settings.mu, Encoding.DIPOLE, 4, settings.rate)
    assert summary["energy_errors"][0] == res.trace[-1] + 1.0


def test_fit_baseline(capsys, tmp_path):
    d = run_cli(capsys, "optimize", "--out", str(tmp_path), *SMALL)
    f = run_cli(capsys, "fit-baseline", str(d), "--out", str(tmp_path), "--n-samples", "7",
                "--set", "fit.n_distances=2000")
    fit = json.loads((f / "fit.json").read_text())
    assert fit["pooled_distances"] == 3 * 3
    assert fit["kl"] <= fit["default_kl"]
    baselines = json.loads((f / "baselines.json").read_text())
    assert len(baselines) == 7
    for b in baselines:
        pos = np.array(b["positions"])
        dist = [np.linalg.norm(pos[i] - pos[j]) for i in range(3) for j in range(i + 1, 3)]
        assert min(dist) >= fit["r_min"]


def test_fit_baseline_empty(capsys, tmp_path):
    assert main(["fit-baseline", str(tmp_path)]) == 2


def test_compare_row_count(capsys, tmp_path):
    d = run_cli(capsys, "compare", "--out", str(tmp_path), "--runs", "2",
                "--set", "problem.kind=random", "--set", "problem.count=2",
                "--set", "fit.n_distances=1000", "--set", "fit.r_min_grid=[0.2,1.0,3]",
                "--set", "fit.r_max_grid=[1.0,2.5,3]", *SMALL)
    with open(d / "comparison.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 * 2 * 3 * 3
    assert {r["arm"] for r in rows} == {"initial", "fitted", "final"}
    assert all(float(r["log10_error"]) >= -16 for r in rows)


def test_gen_hamiltonian_and_eigs(capsys, tmp_path):
    assert main(["gen-hamiltonian", "--out", str(tmp_path), "--seed", "5",
                 "--num-qubits", "3"]) == 0
    path = last_json(capsys)["path"]
    assert main(["eigs", path]) == 0
    e = last_json(capsys)["ground_energy"]
    from atomcbo.hilbert import ground_energy, materialize
    from atomcbo.problems import load_pauli_sum
    assert e == ground_energy(materialize(load_pauli_sum(path)))[0]


def test_shipped_config_matches_defaults():
    path = Path(__file__).parents[1] / "configs" / "ghz.yaml"
    assert experiments.load_config(path) == experiments.load_config()
