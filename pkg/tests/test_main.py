import csv
import json
import os

import numpy as np
import pytest

import main as harness
from errors import ValidationError
from main import build_run_config, main
from utils import validate_run_config


def _write(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


CHAIN = {
    "kind": "finite_chain",
    "transition": [[0.75, 0.25], [0.25, 0.75]],
    "atoms": [[0.0], [1.0]],
    "init": "stationary",
    "target_fn": [[0.0], [1.0]],
    "noise_std": 0.5,
}
SCALAR_LDS = {"kind": "lds", "A_star": [[0.5]], "H": [[1.0]]}


# ---------------------------------------------------------------------------
# Разбор аргументов
# ---------------------------------------------------------------------------

def test_build_run_config():
    cfg = build_run_config(["fit", "--config", "c.json", "--out", "o", "--seed", "5", "--threads", "2"])
    assert (cfg.command, cfg.config_path, cfg.out_dir, cfg.master_seed, cfg.threads) == \
        ("fit", "c.json", "o", 5, 2)


@pytest.mark.parametrize("argv", [
    [],
    ["train", "--config", "c.json"],
    ["fit"],
    ["fit", "--config", "c.json", "--threads", "0"],
])
def test_bad_arguments(argv):
    with pytest.raises(ValidationError):
        build_run_config(argv)
    assert main(argv) == 1


def test_missing_config_writes_nothing(tmp_path):
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(tmp_path / "absent.json"), "--out", str(out)]) == 1
    assert not out.exists()


def test_invalid_config_rejected(tmp_path):
    out = tmp_path / "out"
    path = _write(tmp_path, "sim.json", {"process": SCALAR_LDS})
    assert main(["simulate", "--config", path, "--out", str(out)]) == 1
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    assert main(["simulate", "--config", str(broken), "--out", str(out)]) == 1
    assert not out.exists()


def test_invalid_process_rejected(tmp_path):
    out = tmp_path / "out"
    path = _write(tmp_path, "sim.json", {"process": {"kind": "lds", "A_star": [[1.5]], "H": [[1.0]]}, "T": 10})
    assert main(["simulate", "--config", path, "--out", str(out)]) == 1
    assert not out.exists()


LINEAR_FAMILY = {"kind": "linear_ball", "B": 1.0, "d_x": 1}


@pytest.mark.parametrize("command,doc", [
    ("simulate", {"process": {"kind": "lds", "H": [[1.0]]}, "T": 5}),
    ("simulate", {"process": SCALAR_LDS, "T": "abc"}),
    ("simulate", {"process": SCALAR_LDS, "T": None}),
    ("simulate", {"process": [[0.5]], "T": 5}),
    ("simulate", {"process": {"kind": "lds", "A_star": [["x"]], "H": [[1.0]]}, "T": 5}),
    ("simulate", {"process": SCALAR_LDS, "T": 5, "seed": "seven"}),
    ("fit", {"process": SCALAR_LDS, "family": {"kind": "linear_ball"}, "T": 10}),
    ("fit", {"process": SCALAR_LDS, "family": "linear_ball", "T": 10}),
    ("experiment", {"kind": "risk_curve", "process": {"kind": "lds", "A_star": [[0.5]]},
                    "family": LINEAR_FAMILY, "T_grid": [10, 20], "n_rep": 2}),
    ("experiment", {"kind": "risk_curve", "process": SCALAR_LDS, "family": LINEAR_FAMILY,
                    "T_grid": ["ten"], "n_rep": 2}),
    ("experiment", {"kind": "risk_curve", "process": SCALAR_LDS, "family": LINEAR_FAMILY,
                    "T_grid": [10, 20], "n_rep": "two"}),
    ("experiment", {"kind": "risk_curve", "process": SCALAR_LDS, "family": LINEAR_FAMILY,
                    "T_grid": [10, 20], "n_rep": 2, "optimizer": {"momentum": 0.9}}),
])
def test_malformed_config_exits_with_validation_status(tmp_path, command, doc):
    out = tmp_path / "out"
    path = _write(tmp_path, "bad.json", doc)
    assert main([command, "--config", path, "--out", str(out)]) == 1
    assert not out.exists()


def test_linear_algebra_failure_exits_with_numerical_status(tmp_path, monkeypatch):
    def singular(doc, seed, threads):
        raise np.linalg.LinAlgError("Singular matrix")

    monkeypatch.setitem(harness.COMMAND_HANDLERS, "simulate", singular)
    out = tmp_path / "out"
    path = _write(tmp_path, "sim.json", {"process": SCALAR_LDS, "T": 5})
    assert main(["simulate", "--config", path, "--out", str(out), "--seed", "1"]) == 2
    assert not out.exists()


@pytest.mark.parametrize("doc,command", [
    ({"process": SCALAR_LDS, "T": "abc"}, "simulate"),
    ({"process": SCALAR_LDS, "T": 0}, "simulate"),
    ({"kind": "risk_curve", "process": SCALAR_LDS, "family": LINEAR_FAMILY,
      "T_grid": 10, "n_rep": 2}, "experiment"),
])
def test_validate_run_config_reports_errors(doc, command):
    is_valid, error = validate_run_config(doc, command)
    assert not is_valid
    assert error


# ---------------------------------------------------------------------------
# Команды
# ---------------------------------------------------------------------------

def test_simulate_is_byte_reproducible(tmp_path):
    path = _write(tmp_path, "sim.json", {"process": SCALAR_LDS, "T": 50, "n_traj": 2})
    for name in ("a", "b"):
        assert main(["simulate", "--config", path, "--out", str(tmp_path / name), "--seed", "77"]) == 0
    for i in range(2):
        first = (tmp_path / "a" / f"trajectory_{i}.csv").read_bytes()
        second = (tmp_path / "b" / f"trajectory_{i}.csv").read_bytes()
        assert first == second
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["master_seed"] == 77
    assert "trajectory_1.csv" in manifest["outputs"]


def test_seed_from_config(tmp_path):
    path = _write(tmp_path, "sim.json", {"process": CHAIN, "T": 20, "seed": 9})
    assert main(["simulate", "--config", path, "--out", str(tmp_path / "out")]) == 0
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["master_seed"] == 9


def test_diagnose_symmetric_chain(tmp_path):
    doc = {
        "process": CHAIN,
        "T": 10,
        "n_funcs": 50,
        "brute_force": True,
        "cover": {
            "family": {"kind": "finite_table", "functions": [[[0.0], [1.0]], [[1.0], [1.0]]],
                       "atoms": [[0.0], [1.0]]},
            "epsilon": 0.1,
            "sigma_w": 0.5,
            "T": 10,
        },
    }
    out = tmp_path / "diag"
    assert main(["diagnose", "--config", _write(tmp_path, "diag.json", doc), "--out", str(out), "--seed", "1"]) == 0

    for row in _read_csv(out / "dependency.csv"):
        assert float(row["gamma"]) == pytest.approx(0.5 ** (int(row["lag"]) / 2), abs=1e-12)
    summary = json.loads((out / "dependency.json").read_text(encoding="utf-8"))
    assert summary["brute_force_max_diff"] <= 1e-10
    assert summary["opnorm"] <= summary["row_bound"] + 1e-9
    hyper = json.loads((out / "hyper.json").read_text(encoding="utf-8"))
    assert hyper["C_hat"] == pytest.approx(2.0)
    cover = json.loads((out / "cover.json").read_text(encoding="utf-8"))
    assert cover["certified"]
    assert cover["chaining_bound"] >= 0.0


def test_diagnose_lds_structure(tmp_path):
    doc = {"process": {"kind": "lds", "A_star": [[0.9, 0.2], [0.0, 0.5]], "H": [[1.0, 0.0], [0.0, 1.0]]},
           "T": 100, "rho": 0.95}
    out = tmp_path / "lds"
    assert main(["diagnose", "--config", _write(tmp_path, "lds.json", doc), "--out", str(out), "--seed", "3"]) == 0
    structure = json.loads((out / "structure.json").read_text(encoding="utf-8"))
    assert structure["kappa"] == 1
    assert structure["tau"] >= 1.0
    assert structure["burn_in"]["value"] > 0.0


def test_uncertifiable_stability_exits_with_numerical_code(tmp_path):
    doc = {"process": {"kind": "lds", "A_star": [[0.5, 1.0], [0.0, 0.5]], "H": [[1.0, 0.0], [0.0, 1.0]]},
           "T": 10, "rho": 0.5}
    out = tmp_path / "jordan"
    assert main(["diagnose", "--config", _write(tmp_path, "jordan.json", doc), "--out", str(out)]) == 2
    assert not out.exists()


def test_fit_scalar_lds(tmp_path):
    doc = {"process": SCALAR_LDS, "family": {"kind": "linear_ball", "B": 1.0, "d_x": 1, "d_y": 1}, "T": 200}
    out = tmp_path / "fit"
    assert main(["fit", "--config", _write(tmp_path, "fit.json", doc), "--out", str(out), "--seed", "4"]) == 0
    report = json.loads((out / "fit.json").read_text(encoding="utf-8"))
    assert report["excess_risk"]["method"] == "exact_gramian"
    assert report["excess_risk"]["value"] >= 0.0
    assert report["erm_dominance"]
    assert len(_read_csv(out / "trajectory.csv")) == 200


def test_experiment_outputs(tmp_path):
    doc = {
        "kind": "risk_curve",
        "process": SCALAR_LDS,
        "family": {"kind": "linear_ball", "B": 1.0, "d_x": 1, "d_y": 1},
        "T_grid": [16, 32],
        "n_rep": 2,
        "outputs": "curve.csv",
    }
    path = _write(tmp_path, "exp.json", doc)
    for name, threads in (("one", "1"), ("two", "2")):
        assert main(["experiment", "--config", path, "--out", str(tmp_path / name),
                     "--seed", "8", "--threads", threads]) == 0
    for suffix in ("curve.csv", "curve.agg.csv", "curve.seeds.json", "curve.summary.json"):
        assert os.path.exists(tmp_path / "one" / suffix)
    assert (tmp_path / "one" / "curve.csv").read_bytes() == (tmp_path / "two" / "curve.csv").read_bytes()
    assert len(_read_csv(tmp_path / "one" / "curve.csv")) == 4


def test_experiment_output_cannot_escape(tmp_path):
    doc = {
        "kind": "risk_curve",
        "process": SCALAR_LDS,
        "family": {"kind": "linear_ball", "B": 1.0, "d_x": 1, "d_y": 1},
        "T_grid": [8],
        "n_rep": 2,
        "outputs": "../escape.csv",
    }
    out = tmp_path / "out"
    assert main(["experiment", "--config", _write(tmp_path, "exp.json", doc), "--out", str(out), "--seed", "1"]) == 1
    assert not out.exists()
    assert not (tmp_path / "escape.csv").exists()
