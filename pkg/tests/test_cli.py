import csv
import hashlib
import json

import pytest

from tsvis.cli import main


def run(tmp_path, *argv, out="out"):
    d = tmp_path / out
    rc = main([*argv, "--out", str(d)])
    return rc, d


def sha(p):
    return hashlib.sha256(p.read_bytes()).hexdigest()


def test_simulate_writes_artifacts_and_manifest(tmp_path):
    rc, d = run(tmp_path, "simulate", "--case", "case_smib", "--tau", "0", "--horizon", "1.0")
    assert rc == 0
    for name in ("trajectory.csv", "events.csv", "coi.csv", "coi.svg", "summary.json", "manifest.json"):
        assert (d / name).exists(), name
    man = json.loads((d / "manifest.json").read_text())
    assert man["command"] == "simulate" and man["seed"] == 0
    assert man["case"]["sha256"] == sha(__import__("pathlib").Path(man["case"]["path"]))
    for name, digest in man["artifacts"].items():
        assert sha(d / name) == digest
    summary = json.loads((d / "summary.json").read_text())
    assert summary["tis_class"] == 0
    rows = list(csv.DictReader(open(d / "coi.csv")))
    assert max(abs(float(r["delta_f_hz"])) for r in rows) < 1e-6


def test_simulate_fault_with_trip(tmp_path):
    rc, d = run(tmp_path, "simulate", "--case", "case9ish", "--line", "5", "--tau", "0.1", "--x", "0.3",
                "--trip", "SG2@3.0", "--horizon", "4.0")
    assert rc == 0
    events = (d / "events.csv").read_text()
    assert "SG2" in events


def test_cct_command(tmp_path):
    rc, d = run(tmp_path, "cct", "--case", "case_smib", "--line", "1", "--x", "0.0", "--horizon", "3.0")
    assert rc == 0
    doc = json.loads((d / "cct.json").read_text())
    assert 0.05 < doc["cct_s"] < 0.5


def test_sweep_manifest_is_reproducible(tmp_path):
    rc1, d1 = run(tmp_path, "sweep", "--case", "case9ish", "--count", "3", "--seed", "7", "--horizon", "3.0", out="a")
    rc2, d2 = run(tmp_path, "sweep", "--case", "case9ish", "--count", "3", "--seed", "7", "--horizon", "3.0", out="b")
    assert rc1 == rc2 == 0
    assert (d1 / "manifest.json").read_bytes() == (d2 / "manifest.json").read_bytes()
    lines = (d1 / "sweep.jsonl").read_text().splitlines()
    assert len(lines) == 3


def test_dispatch_and_robust(tmp_path):
    rc, d = run(tmp_path, "dispatch", "--case", "case9ish")
    assert rc == 0
    doc = json.loads((d / "dispatch.json").read_text())
    assert doc["violations"] == []
    nominal = doc["dispatch"]["total_cost"] if "dispatch" in doc else doc["total_cost"]
    rc, d = run(tmp_path, "robust", "--case", "case9ish", "--theta", "0", "--cc", repr(nominal), out="r")
    assert rc == 0
    assert json.loads((d / "robust.json").read_text())["sigma_star"] == pytest.approx(0.0, abs=1e-4)
    rc, d = run(tmp_path, "robust", "--case", "case9ish", "--theta", "0.1", "--cc", repr(nominal), out="r2")
    assert rc == 0
    assert json.loads((d / "robust.json").read_text())["sigma_star"] > 0


def test_robust_requires_critical_cost(tmp_path):
    rc, _ = run(tmp_path, "robust", "--case", "case9ish", "--theta", "0.1")
    assert rc == 2


def test_robust_budget_below_nominal_exits_1(tmp_path, capsys):
    rc, _ = run(tmp_path, "robust", "--case", "case9ish", "--theta", "0", "--cc", "1e-3")
    assert rc == 1
    assert "budget below nominal" in capsys.readouterr().err


def test_risk_from_cct_file(tmp_path):
    cct = tmp_path / "cct.json"
    cct.write_text(json.dumps({str(i): 0.0625 for i in range(1, 10)}))  # 3.75 cycles on every line
    rc, d = run(tmp_path, "risk", "--case", "case9ish", "--cct-file", str(cct))
    assert rc == 0
    last = (d / "risk.csv").read_text().splitlines()[-1].split(",")
    assert last[0] == "theta" and float(last[-1]) == pytest.approx(0.5, abs=1e-4)


def test_risk_unit_mismatch_and_missing_lines(tmp_path):
    cct = tmp_path / "cct.json"
    cct.write_text(json.dumps({"1": 0.1}))
    rc, _ = run(tmp_path, "risk", "--case", "case9ish", "--cct-file", str(cct))
    assert rc == 1


def test_eigen_command(tmp_path):
    rc, d = run(tmp_path, "eigen", "--case", "case9ish")
    assert rc == 0
    rows = list(csv.reader(open(d / "eigen.csv")))
    assert rows[0] == ["real", "imag"] and len(rows) > 2
    assert (d / "eigen.svg").read_text().lstrip().startswith("<?xml")


def test_dataset_and_train(tmp_path):
    rc, d = run(tmp_path, "dataset", "--case", "case9ish", "--count", "12", "--seed", "3", "--horizon", "3.0",
                out="ds")
    assert rc == 0
    ds = d / "dataset.jsonl"
    assert ds.exists() and (d / "dataset.jsonl.f32").exists()
    rc, m = run(tmp_path, "train", "--dataset", str(ds), "--task", "regressor", "--epochs", "1",
                "--min-records", "5", out="m")
    assert rc == 0
    assert (m / "regressor.json").exists() and (m / "regressor.json.npz").exists()
    assert "regressor_holdout_rmse_hz" in json.loads((m / "metrics.json").read_text())


def test_usage_errors(tmp_path):
    assert run(tmp_path, "simulate", "--case", "no-such-case")[0] == 2
    assert run(tmp_path, "sweep", "--count", "2", "--tau-range", "abc")[0] == 2
    assert main(["frobnicate"]) == 2
    assert main([]) == 2


def test_case_study_command(tmp_path):
    rc, d = run(tmp_path, "case-study")
    assert rc == 0
    rep = json.loads((d / "report.json").read_text())
    assert rep["branch_a"]["tis_class"] == 1
    for name in ("coi_branch_a.csv", "coi_branch_b.csv", "eigen.csv", "eigen.svg", "risk.csv", "robust.json",
                 "coi.svg"):
        assert (d / name).exists(), name
    assert "runtime_s" not in rep
