import csv
import json
import subprocess
import sys

import pytest

from mlope.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def toy(toy_dir):
    return {
        "env": toy_dir / "env.json",
        "policies": toy_dir / "policies.json",
        "family": toy_dir / "family.json",
        "log": toy_dir / "log.jsonl",
        "config": toy_dir / "simulate.json",
    }


def test_evaluate_naive(capsys, toy):
    code, out, _ = run(capsys, "evaluate", "--log", toy["log"], "--policies", toy["policies"], "--target", "pibar")
    assert code == 0
    doc = json.loads(out)
    assert doc["report"]["estimate"] == pytest.approx(21.0)
    assert doc["report"]["total_records"] == 2
    assert doc["manifest"]["subcommand"] == "evaluate"
    assert {i["role"] for i in doc["manifest"]["inputs"]} == {"policies", "log"}


def test_evaluate_target_from_file(capsys, toy, tmp_path):
    target = tmp_path / "target.json"
    target.write_text('{"name": "t", "probs": [[0.8, 0.2], [0.2, 0.8]]}')
    code, out, _ = run(capsys, "evaluate", "--log", toy["log"], "--target", target)
    assert code == 0 and json.loads(out)["report"]["estimate"] == pytest.approx(21.0)


def test_evaluate_balanced_and_weighted(capsys, toy, tmp_path):
    common = ["evaluate", "--log", toy["log"], "--policies", toy["policies"], "--target", "pibar"]
    code, out, _ = run(capsys, *common, "--estimator", "balanced")
    assert code == 0 and json.loads(out)["report"]["estimate"] == pytest.approx(7.49494949)
    code, out, _ = run(capsys, *common, "--estimator", "weighted", "--weights", "exact", "--env", toy["env"])
    doc = json.loads(out)
    assert code == 0 and doc["report"]["weights_used"] == pytest.approx([0.016614, 0.983386], abs=1e-6)
    w = tmp_path / "w.json"
    w.write_text('{"weights": [0, 1]}')
    code, out, _ = run(capsys, *common, "--estimator", "weighted", "--weights", f"file:{w}")
    assert code == 0 and json.loads(out)["report"]["estimate"] == pytest.approx(2.0)


def test_evaluate_invalid_weights_exit_3(capsys, toy, tmp_path):
    w = tmp_path / "w.json"
    w.write_text('{"weights": [0.5, 0.6]}')
    code, _, err = run(
        capsys, "evaluate", "--log", toy["log"], "--policies", toy["policies"], "--target", "pibar",
        "--estimator", "weighted", "--weights", f"file:{w}",
    )
    assert code == 3 and "InvalidWeights" in err


def test_evaluate_missing_policy_exit_3(capsys, toy):
    code, _, err = run(capsys, "evaluate", "--log", toy["log"], "--target", toy["family"], "--estimator", "balanced")
    assert code == 3 and "MissingPolicy" in err


def test_evaluate_weighted_requires_source(capsys, toy):
    code, _, _ = run(
        capsys, "evaluate", "--log", toy["log"], "--policies", toy["policies"], "--target", "pibar",
        "--estimator", "weighted",
    )
    assert code == 2


def test_evaluate_parse_error_exit_2(capsys, toy, tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"logger": "a", "x": 0, "y": 0, "delta": 1, "p": 0.5}\n{"logger": "a", "x": 0\n')
    code, _, err = run(capsys, "evaluate", "--log", bad, "--policies", toy["policies"], "--target", "pibar")
    assert code == 2 and ":2:" in err


def test_unknown_estimator_is_usage_error(capsys, toy):
    with pytest.raises(SystemExit) as info:
        main(["evaluate", "--log", str(toy["log"]), "--target", "pibar", "--estimator", "magic"])
    assert info.value.code == 2
    capsys.readouterr()


def test_exact_document(capsys, toy):
    code, out, _ = run(capsys, "exact", "--env", toy["env"], "--policies", toy["policies"], "--target", "pibar", "--sizes", "1,1")
    assert code == 0
    doc = json.loads(out)
    a = doc["analysis"]
    assert a["loggers"] == ["pi1", "pi2"]
    assert a["utility"] == pytest.approx(8.2)
    assert a["divergences"] == pytest.approx([252.81, 4.271111], abs=1e-5)
    assert a["naive_variance"] == pytest.approx(64.2703, abs=1e-4)
    assert a["balanced_variance"] == pytest.approx(12.4274, abs=1e-4)
    assert a["weighted_variance"] == pytest.approx(4.2002, abs=1e-4)
    assert a["reduction_ratio"] == pytest.approx(0.0653, abs=1e-4)
    assert doc["display"]["optimal_weights"] == ["0.02", "0.98"]
    assert "8.1999999999999993" in out  # 17 significant digits


def test_exact_single_logger(capsys, toy):
    code, out, _ = run(
        capsys, "exact", "--env", toy["env"], "--policies", toy["policies"], "--target", "pibar",
        "--loggers", "pi1", "--sizes", "4",
    )
    a = json.loads(out)["analysis"]
    assert code == 0 and a["weighted_variance"] == pytest.approx(a["naive_variance"], rel=1e-12)


def test_exact_support_violation_exit_3(capsys, toy, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"name": "bad", "probs": [[0.0, 1.0], [0.5, 0.5]]}')
    code, _, err = run(
        capsys, "exact", "--env", toy["env"], "--policies", toy["policies"], "--target", "pibar",
        "--loggers", f"pi2,{bad}", "--sizes", "1,1",
    )
    assert code == 3 and "(x1, y1)" in err


def test_exact_bad_sizes_exit_2(capsys, toy):
    for sizes in ("1,0", "1", "a,b"):
        try:
            code, _, _ = run(capsys, "exact", "--env", toy["env"], "--policies", toy["policies"], "--target", "pibar", "--sizes", sizes)
        except SystemExit as exc:
            code = exc.code
            capsys.readouterr()
        assert code == 2


def test_estimate_weights(capsys, toy, tmp_path):
    log = tmp_path / "log.jsonl"
    log.write_text(
        "".join(
            json.dumps(r) + "\n"
            for r in [
                {"logger": "pi1", "x": 0, "y": 0, "delta": 10, "p": 0.2},
                {"logger": "pi1", "x": 0, "y": 1, "delta": 1, "p": 0.8},
                {"logger": "pi2", "x": 0, "y": 0, "delta": 10, "p": 0.9},
                {"logger": "pi2", "x": 1, "y": 1, "delta": 10, "p": 0.9},
            ]
        )
    )
    code, _, err = run(capsys, "estimate-weights", "--log", log, "--policies", toy["policies"], "--target", "pibar")
    assert code == 3 and "ZeroDivergenceEstimate" in err
    code, out, _ = run(
        capsys, "estimate-weights", "--log", log, "--policies", toy["policies"], "--target", "pibar", "--fallback", "naive"
    )
    report = json.loads(out)["weights_report"]
    assert code == 0
    assert report["loggers"] == ["pi1", "pi2"]
    assert report["estimates"][0] == pytest.approx((40 - 0.25) ** 2 / 2)
    assert report["floor_applied"] == [False, True]
    assert report["fallback_used"] is True
    assert report["weights"] == [0.25, 0.25]


def test_simulate(capsys, toy):
    code, out, _ = run(capsys, "simulate", "--config", toy["config"], "--replicates", "2000")
    s = json.loads(out)["summary"]
    assert code == 0
    assert s["replicates"] == 2000
    assert abs(s["empirical_mean"] - 8.2) < 4 * s["standard_error"]
    assert s["exact_variance"] == pytest.approx(64.2703, abs=1e-4)


def test_simulate_zero_replicates_exit_2(capsys, toy):
    code, _, _ = run(capsys, "simulate", "--config", toy["config"], "--replicates", "0")
    assert code == 2


def test_simulate_is_byte_identical(toy, tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for out, workers in ((a, "1"), (b, "3")):
        assert main(["simulate", "--config", str(toy["config"]), "--replicates", "5000", "--workers", workers, "--out", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_simulate_default_seed_warns(capsys, toy, tmp_path, caplog):
    cfg = json.loads(toy["config"].read_text())
    del cfg["seed"]
    for key in ("env", "policies"):
        cfg[key] = str(toy[key])
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    with caplog.at_level("WARNING", logger="mlope"):
        code, out, _ = run(capsys, "simulate", "--config", path, "--replicates", "10")
    assert code == 0
    assert json.loads(out)["manifest"]["master_seed"] == 0
    assert "seed" in caplog.text


def read_sweep(path):
    lines = [line for line in path.read_text().splitlines() if not line.startswith("#")]
    return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(lines)]


def test_sweep(toy, tmp_path):
    out = tmp_path / "sweep.csv"
    code = main([
        "sweep", "--env", str(toy["env"]), "--policies", str(toy["policies"]), "--policies", str(toy["family"]),
        "--target", "pibar", "--logger2", "pi2", "--out", str(out),
    ])
    assert code == 0
    text = out.read_text()
    assert text.startswith("# manifest: ")
    rows = read_sweep(out)
    assert len(rows) == 2 * 5 * 8
    assert all(r["ratio_bal"] <= 1 and r["ratio_weight"] <= 1 for r in rows)


def test_sweep_single_point_identical_loggers(toy, tmp_path):
    out = tmp_path / "sweep.csv"
    code = main([
        "sweep", "--env", str(toy["env"]), "--policies", str(toy["policies"]), "--target", "pibar",
        "--logger2", "pi2", "--family-base", "pi2", "--mix-grid", "1", "--r1-grid", "1", "--out", str(out),
    ])
    (row,) = read_sweep(out)
    assert code == 0 and row["v1"] == pytest.approx(1.0) and row["ratio_weight"] == pytest.approx(1.0)


def test_sweep_toy_pair_drop_ratio(toy, tmp_path):
    out = tmp_path / "sweep.csv"
    main([
        "sweep", "--env", str(toy["env"]), "--policies", str(toy["policies"]), "--target", "pibar",
        "--logger2", "pi2", "--family-base", "pi1", "--mix-grid", "1", "--r1-grid", "1", "--base-n2", "1",
        "--out", str(out),
    ])
    (row,) = read_sweep(out)
    assert row["ratio_drop"] == pytest.approx(0.0665, abs=1e-4)


def test_module_entry_point(toy):
    proc = subprocess.run(
        [sys.executable, "-m", "mlope", "exact", "--env", str(toy["env"]), "--policies", str(toy["policies"]), "--target", "pibar"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0 and '"reduction_ratio"' in proc.stdout
