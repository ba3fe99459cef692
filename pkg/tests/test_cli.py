import csv
import json

import numpy as np
import pytest

from conftest import three_der_model
from derflow import records
from derflow.cli import main
from derflow.network import save_network


@pytest.fixture
def scenario(tmp_path):
    save_network(three_der_model(), tmp_path / "small.txt")
    cfg = {"feeder": "small.txt", "duration": 30.0, "warmup_steps": 20, "signal": {"std": 0.1, "corr_time": 60.0}}
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(cfg))
    return path


def test_run_writes_outputs(scenario, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(scenario), "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["lfs.csv", "metrics.json", "steps.csv"]
    rows = records.read_steps_csv(out / "steps.csv")
    assert len(rows) == 15 and {"z_3", "z_5", "z_6"} <= set(rows[0])
    meta = records.read_metrics_json(out / "metrics.json")
    assert meta["config"]["duration"] == 30.0
    assert meta["avg_score"] == pytest.approx(np.mean([r["score"] for r in rows]))
    hat, true = records.read_lfs_csv(out / "lfs.csv")
    assert hat.shape == true.shape == (15, 6)
    assert "avg_score" in capsys.readouterr().out


def test_refuses_overwrite(scenario, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(scenario), "--out", str(out)]) == 0
    assert main(["run", "--config", str(scenario), "--out", str(out)]) == 2
    assert "--force" in capsys.readouterr().err
    assert main(["run", "--config", str(scenario), "--out", str(out), "--force"]) == 0


def test_missing_feeder_is_reported(tmp_path, capsys):
    cfg = tmp_path / "s.json"
    cfg.write_text(json.dumps({"feeder": str(tmp_path / "absent_feeder.txt")}))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) != 0
    assert "absent_feeder.txt" in capsys.readouterr().err


def test_seed_override_is_deterministic(scenario, tmp_path):
    for name in ("a", "b", "c"):
        seed = "8" if name == "c" else "7"
        assert main(["run", "--config", str(scenario), "--out", str(tmp_path / name), "--seed", seed]) == 0
    a, b, c = ((tmp_path / n / "steps.csv").read_bytes() for n in "abc")
    assert a == b and a != c


def test_controller_override(scenario, tmp_path):
    out = tmp_path / "pf"
    assert main(["run", "--config", str(scenario), "--out", str(out), "--controller", "pfbaseline"]) == 0
    assert records.read_metrics_json(out / "metrics.json")["controller"] == "PfBaseline"
    assert main(["run", "--config", str(scenario), "--out", str(out), "--controller", "nope", "--force"]) == 2


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_compare_lists_every_controller(scenario, tmp_path, fmt):
    out = tmp_path / "cmp"
    assert main(["compare", "--config", str(scenario), "--out", str(out), "--format", fmt]) == 0
    rows = records.read_table(out / f"compare.{fmt}")
    assert [r["controller"] for r in rows] == ["LfEstimated", "LfActual", "PfBaseline", "ModelActiveLf"]
    scores = {r["controller"]: float(r["avg_score"]) for r in rows}
    assert scores["PfBaseline"] < scores["LfEstimated"]


def test_quiescent_compare_is_flagged(tmp_path):
    save_network(three_der_model(), tmp_path / "small.txt")
    cfg = tmp_path / "q.json"
    cfg.write_text(json.dumps({"feeder": "small.txt", "duration": 10.0, "warmup_steps": 5, "sigma": 0.0,
                               "signal": {"std": 0.0}}))
    assert main(["compare", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rows = records.read_table(tmp_path / "o" / "compare.csv")
    assert all(r["score_flagged"] == "1" and float(r["avg_score"]) == 1.0 for r in rows)


def test_compute_lfs(tmp_path, capsys):
    assert main(["compute-lfs", "--feeder", "case33_modified", "--out", str(tmp_path)]) == 0
    rows = records.read_table(tmp_path / "lfs_nominal.csv")
    assert len(rows) == 33 and set(rows[0]) == {"bus", "active", "reactive", "total"}
    assert float(rows[11]["total"]) != pytest.approx(float(rows[11]["active"]), abs=1e-3)
    assert main(["compute-lfs", "--feeder", "case33bw", "--format", "json"]) == 0
    assert len(json.loads(capsys.readouterr().out)) == 32


def test_estimate(tmp_path):
    rng = np.random.default_rng(0)
    lam = np.array([-0.02, -0.05, -0.1])
    path = tmp_path / "m.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "dP1", "dP2", "dP3", "dPt"])
        for k in range(30):
            dp = 0.05 * rng.standard_normal(3)
            w.writerow([k, *dp, (lam - 1) @ dp])
    assert main(["estimate", "--input", str(path), "--out", str(tmp_path / "o")]) == 0
    rows = records.read_table(tmp_path / "o" / "estimates.csv")
    assert len(rows) == 30 - 6 + 1
    last = [float(rows[-1][f"lambda_{i}"]) for i in (1, 2, 3)]
    np.testing.assert_allclose(last, lam, atol=1e-6)


def test_estimate_bad_input(tmp_path, capsys):
    path = tmp_path / "m.csv"
    path.write_text("step,dP1,dPt\n0,0.1,0.2\n1,abc,0.1\n")
    assert main(["estimate", "--input", str(path), "--out", str(tmp_path / "o")]) == 2
    assert ":3" in capsys.readouterr().err


def test_dispatch(tmp_path):
    prob = {"lambda_hat": [0, 0, 0], "lower": [-100, -100, -100], "upper": [100, 100, 100], "r": 300}
    (tmp_path / "p.json").write_text(json.dumps(prob))
    out = tmp_path / "res.json"
    assert main(["dispatch", "--problem", str(tmp_path / "p.json"), "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert res["status"] == "Optimal"
    np.testing.assert_allclose(res["z_kw"], [100, 100, 100], atol=1e-9)
    (tmp_path / "p.json").write_text(json.dumps({**prob, "r": 600, "method": "pf"}))
    assert main(["dispatch", "--problem", str(tmp_path / "p.json"), "--out", str(out), "--force"]) == 0
    res = json.loads(out.read_text())
    assert res["status"] == "ClampedInfeasible" and res["multiplier"] is None


def test_dispatch_missing_field(tmp_path, capsys):
    (tmp_path / "p.json").write_text(json.dumps({"lambda_hat": [0.0], "lower": [-1], "upper": [1]}))
    assert main(["dispatch", "--problem", str(tmp_path / "p.json")]) == 2
    assert "'r'" in capsys.readouterr().err
