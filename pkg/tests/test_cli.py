import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from confide.cli import dumps, main
from confide.domain import CombinationDataset, save_dataset


def run(*argv):
    return main([str(a) for a in argv])


def error_of(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    return json.loads(err[0])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    cfg = {"k": 10, "n": 4000, "phi_diag": 0.95, "t_star": 2.5, "concentration": 0.2, "seed": 11}
    (d / "c.json").write_text(json.dumps(cfg))
    assert run("simulate", "--config", d / "c.json", "--out", d / "train.csv", "--eval-fraction", 0.5,
               "--eval-out", d / "eval.csv", "--config-out", d / "echo.json") == 0
    assert run("fit", "--method", "pl-map", "--train", d / "train.csv", "--out", d / "p.json",
               "--prior-accuracy", 0.9, "--prior-strength", 10, "--temp-mu", 0.5, "--temp-sigma", 0.5) == 0
    assert run("evaluate", "--params", d / "p.json", "--data", d / "eval.csv", "--oracle", d / "eval_oracle.csv",
               "--out", d / "report.json", "--reliability-out", d / "rel.csv") == 0
    return d


def test_simulate_outputs(pipeline):
    echo = json.loads((pipeline / "echo.json").read_text())
    assert echo["config"]["t_star"] == 2.5 and len(echo["phi"]) == 10
    assert echo["files"]["n_train"] + echo["files"]["n_eval"] == 4000
    for name in ("train.csv", "eval.csv", "oracle.csv", "eval_oracle.csv"):
        assert (pipeline / name).exists()


def test_fit_writes_params(pipeline):
    params = json.loads((pipeline / "p.json").read_text())
    assert params["method"] == "PL" and len(params["phi"]) == 10 and params["temperature"] > 1
    meta = params["meta"]
    assert meta["prior_accuracy"] == 0.9 and meta["temp_sigma"] == 0.5 and "version" in meta


def test_evaluate_report_structure_and_ordering(pipeline):
    rep = json.loads((pipeline / "report.json").read_text())
    for section in ("model_calibrated", "model_uncalibrated", "combination", "human"):
        assert set(rep[section]) >= {"error_rate", "nll", "ece", "cw_ece"}
    assert rep["model_calibrated"]["mce_l1"] < rep["model_uncalibrated"]["mce_l1"]
    comb = rep["combination"]["nll"]
    assert comb <= rep["model_calibrated"]["nll"]
    assert comb <= rep["human"]["nll"]
    lines = (pipeline / "rel.csv").read_text().splitlines()
    assert lines[0] == "bin,count,confidence,accuracy" and len(lines) == 16


def _params_with(pipeline, tmp_path, phi):
    params = json.loads((pipeline / "p.json").read_text())
    params["phi"] = phi.tolist()
    path = tmp_path / "mod.json"
    path.write_text(json.dumps(params))
    return path


def test_evaluate_reductions(pipeline, tmp_path):
    uniform = _params_with(pipeline, tmp_path, np.full((10, 10), 0.1))
    assert run("evaluate", "--params", uniform, "--data", pipeline / "eval.csv", "--out", tmp_path / "u.json") == 0
    rep = json.loads((tmp_path / "u.json").read_text())
    for key in ("error_rate", "nll", "ece", "cw_ece"):
        assert rep["combination"][key] == pytest.approx(rep["model_calibrated"][key], abs=1e-12)
    ident = _params_with(pipeline, tmp_path, np.eye(10))
    assert run("evaluate", "--params", ident, "--data", pipeline / "eval.csv", "--out", tmp_path / "i.json") == 0
    rep = json.loads((tmp_path / "i.json").read_text())
    assert rep["combination"]["error_rate"] == rep["human"]["error_rate"]


def test_combine_csv(pipeline, tmp_path):
    assert run("combine", "--params", pipeline / "p.json", "--data", pipeline / "eval.csv", "--out", tmp_path / "q.csv") == 0
    lines = (tmp_path / "q.csv").read_text().splitlines()
    assert lines[0] == "row,label," + ",".join(f"q_{i}" for i in range(10))
    first = lines[1].split(",")
    assert first[0] == "0" and abs(sum(float(v) for v in first[2:]) - 1) < 1e-12


def test_theory_and_diagnose(pipeline, tmp_path):
    assert run("theory", "--params", pipeline / "p.json", "--data", pipeline / "eval.csv",
               "--oracle", pipeline / "eval_oracle.csv", "--phi-true", pipeline / "echo.json",
               "--out", tmp_path / "t.json") == 0
    rep = json.loads((tmp_path / "t.json").read_text())
    bound = rep["accuracy_bound"]
    assert bound["holds"] and bound["empirical_accuracy"] >= bound["bound_weak"] - bound["slack"]
    assert rep["estimation_error"]["holds"]
    assert run("diagnose", "--data", pipeline / "eval.csv", "--out", tmp_path / "d.json") == 0
    assert json.loads((tmp_path / "d.json").read_text())["cmi"] >= 0


def test_learning_curve_shape(pipeline, tmp_path):
    out = tmp_path / "lc.csv"
    assert run("learning-curve", "--method", "pl-map", "--train", pipeline / "train.csv", "--eval", pipeline / "eval.csv",
               "--sizes", "10,30,100,300,1000", "--seeds", 25, "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "size,mean_error,std_error,seeds"
    assert [int(line.split(",")[0]) for line in lines[1:]] == [10, 30, 100, 300, 1000]
    assert all(line.endswith(",25") for line in lines[1:])


def test_reruns_are_byte_identical(pipeline, tmp_path):
    for method in ("pl-em-map", "lr", "pl-bayes"):
        outs = []
        for i in range(2):
            out = tmp_path / f"{method}{i}.json"
            assert run("fit", "--method", method, "--train", pipeline / "train.csv", "--out", out, "--seed", 3) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]


def test_unlabeled_em_fit(tmp_path, rng):
    probs = rng.dirichlet(np.ones(3), size=200)
    data = CombinationDataset(probs.argmax(axis=1), probs)
    save_dataset(data, tmp_path / "u.csv")
    assert run("fit", "--method", "pl-em-map", "--train", tmp_path / "u.csv", "--out", tmp_path / "p.json") == 0
    assert json.loads((tmp_path / "p.json").read_text())["method"] == "PL_EM"


def test_lr_too_few_rows(tmp_path, capsys):
    data = CombinationDataset([0, 1], [[0.5, 0.3, 0.2], [0.1, 0.8, 0.1]], [0, 1])
    save_dataset(data, tmp_path / "tiny.csv")
    assert run("fit", "--method", "lr", "--train", tmp_path / "tiny.csv", "--out", tmp_path / "p.json") == 1
    assert error_of(capsys)["error"] == "TooFewRows"
    assert not (tmp_path / "p.json").exists()


def test_config_keys_are_strict(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"k": 3, "bogus": 1}))
    assert run("simulate", "--config", tmp_path / "c.json", "--out", tmp_path / "d.csv") == 1
    assert error_of(capsys)["error"] == "ConfigInvalid"


def test_flags_override_config(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"k": 3, "n": 50, "t-star": 2.0}))
    assert run("simulate", "--config", tmp_path / "c.json", "--n", 20, "--out", tmp_path / "d.csv") == 0
    echo = json.loads(capsys.readouterr().out)
    assert echo["config"]["n"] == 20 and echo["config"]["k"] == 3 and echo["config"]["t_star"] == 2.0


def test_config_only_confusion_matrix(tmp_path, capsys):
    phi = [[0.9, 0.3], [0.1, 0.7]]
    (tmp_path / "c.json").write_text(json.dumps({"k": 2, "n": 30, "phi_star": phi}))
    assert run("simulate", "--config", tmp_path / "c.json", "--out", tmp_path / "d.csv") == 0
    assert json.loads(capsys.readouterr().out)["phi"] == phi


@pytest.mark.parametrize(
    "argv, code, status",
    [
        ([], "UsageError", 2),
        (["fit", "--method", "nope"], "UsageError", 2),
        (["fit", "--method", "pl-map"], "UsageError", 2),
        (["fit", "--method", "pl-map", "--train", "/nonexistent/x.csv", "--out", "p.json"], "IOError", 1),
        (["simulate", "--k", "1", "--out", "d.csv"], "ConfigInvalid", 1),
    ],
)
def test_error_json_and_exit_codes(argv, code, status, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == status
    assert error_of(capsys)["error"] == code


def test_supervised_method_on_unlabeled_file(tmp_path, capsys):
    data = CombinationDataset([0, 1, 1], [[0.6, 0.4], [0.3, 0.7], [0.5, 0.5]])
    save_dataset(data, tmp_path / "u.csv")
    assert run("fit", "--method", "pl-ml", "--train", tmp_path / "u.csv", "--out", tmp_path / "p.json") == 1
    assert error_of(capsys)["error"] == "NoSupervisedRows"
    # MAP without evidence falls back to the priors
    assert run("fit", "--method", "pl-map", "--train", tmp_path / "u.csv", "--out", tmp_path / "p.json",
               "--prior-accuracy", 0.8) == 0
    params = json.loads((tmp_path / "p.json").read_text())
    assert params["temperature"] == pytest.approx(np.exp(0.5))
    assert np.diag(params["phi"]) == pytest.approx([0.8, 0.8])


def test_dumps_float_format():
    text = dumps({"a": 0.1, "b": 2.0, "c": [1, 0.5], "d": float("inf"), "e": True})
    obj = json.loads(text)
    assert obj == {"a": 0.1, "b": 2.0, "c": [1, 0.5], "d": None, "e": True}
    assert '"a": 0.10000000000000001' in text and '"b": 2.0' in text


@pytest.mark.skipif(shutil.which("confide") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(["confide", "simulate", "--k", "3", "--n", "5", "--out", str(tmp_path / "d.csv")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "confide.cli", "fit"], capture_output=True, text=True)
    assert proc.returncode == 2 and json.loads(proc.stderr)["error"] == "UsageError"
