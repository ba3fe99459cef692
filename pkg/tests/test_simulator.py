import dataclasses
import json

import numpy as np
import pytest

from conftest import three_der_model
from derflow import records
from derflow.odcp import OdcpStatus
from derflow.simulator import (
    Controller,
    RampConfig,
    ScenarioConfig,
    SignalConfig,
    SimulationError,
    load_scenario,
    load_signal_trace,
    performance_score,
    ramp_scale,
    run_closed_loop,
    synthetic_signal,
)

QUICK = dict(duration=60.0, warmup_steps=20, signal=SignalConfig(std=0.1, corr_time=60.0))


@pytest.fixture(scope="module")
def small():
    return three_der_model()


@pytest.fixture(scope="module")
def small_run(small):
    return run_closed_loop(small, ScenarioConfig(**QUICK))


def test_score_examples():
    s, flagged = performance_score([1.0, 1.0], [0.9, 1.1])
    np.testing.assert_allclose(s, [0.9, 0.9])
    assert not flagged.any()
    s, flagged = performance_score([0.0, 0.0, 1.0], [0.1, 0.0, 1.0])
    assert list(flagged) == [True, True, False]
    assert s[2] == pytest.approx(0.9)
    with pytest.raises(ValueError):
        performance_score([1.0], [1.0, 2.0])


def test_perfect_tracking_scores_one():
    r = np.sin(np.arange(20))
    s, _ = performance_score(r, r)
    np.testing.assert_array_equal(s, 1.0)


def test_synthetic_signal_properties():
    assert not synthetic_signal(0.0, 60.0, 1.0, 0, 50).any()
    a = synthetic_signal(0.2, 60.0, 1.0, 3, 200)
    np.testing.assert_array_equal(a, synthetic_signal(0.2, 60.0, 1.0, 3, 200))
    assert np.abs(synthetic_signal(0.5, 60.0, 0.1, 3, 500)).max() <= 0.1
    slow = synthetic_signal(0.2, 1e5, 10.0, 4, 2000)
    assert np.corrcoef(slow[:-1], slow[1:])[0, 1] > 0.99
    fast = synthetic_signal(0.2, 2.0, 10.0, 5, 20000)
    assert fast.std() == pytest.approx(0.2, rel=0.05)
    with pytest.raises(ValueError):
        synthetic_signal(0.1, 0.0, 1.0, 0, 10)


def test_trace_loading(tmp_path):
    p = tmp_path / "sig.csv"
    p.write_text("t_s,r\n0,0.1\n2,0.2\n4,-0.3\n")
    np.testing.assert_array_equal(load_signal_trace(p, 2.0), [0.1, 0.2, -0.3])
    fine = tmp_path / "fine.csv"
    fine.write_text("".join(f"{t},{t / 10}\n" for t in range(7)))
    np.testing.assert_allclose(load_signal_trace(fine, 2.0), [0.0, 0.2, 0.4, 0.6])
    coarse = tmp_path / "coarse.csv"
    coarse.write_text("0,1\n4,2\n")
    np.testing.assert_array_equal(load_signal_trace(coarse, 2.0), [1, 1, 2])


@pytest.mark.parametrize("text, match", [("", "empty"), ("t_s,r\n", "empty"), ("0,1\n0,2\n", "increasing"),
                                         ("0,1\n2,x\n", "malformed")])
def test_bad_traces(tmp_path, text, match):
    p = tmp_path / "sig.csv"
    p.write_text(text)
    with pytest.raises(ValueError, match=match):
        load_signal_trace(p)


def test_ramp_profile():
    cfg = ScenarioConfig(ramp=RampConfig(60, 120, 0.2))
    assert [ramp_scale(cfg, t) for t in (0, 60, 90, 120, 300)] == pytest.approx([1, 1, 1.1, 1.2, 1.2])
    assert ramp_scale(ScenarioConfig(), 200) == 1.0


def test_quiescent_loop(small):
    cfg = ScenarioConfig(**{**QUICK, "sigma": 0.0, "signal": SignalConfig(std=0.0)})
    m = run_closed_loop(small, cfg)
    assert m.score_flagged
    for s in m.steps:
        assert not np.any(s.z)
        assert abs(s.r_m) <= 1e-9
        assert s.score_flagged


def test_telemetry_is_plant_truth(small_run):
    assert len(small_run.steps) == 30
    for s in small_run.steps:
        assert s.r_m == pytest.approx(s.p_t0 - s.p_t, abs=0)
    s, _ = performance_score([x.r for x in small_run.steps], [x.r_m for x in small_run.steps])
    assert small_run.final_score == s[-1]
    assert small_run.avg_score == pytest.approx(s.mean())


def test_determinism(small, small_run):
    again = run_closed_loop(small, ScenarioConfig(**QUICK))
    for a, b in zip(small_run.steps, again.steps):
        assert a.r_m == b.r_m
        np.testing.assert_array_equal(a.lambda_hat, b.lambda_hat)
    other = run_closed_loop(small, ScenarioConfig(**{**QUICK, "seed": 1}))
    assert other.steps[-1].r_m != small_run.steps[-1].r_m


def test_capacity_is_respected(small):
    cfg = ScenarioConfig(**{**QUICK, "signal": SignalConfig(std=0.4, corr_time=60.0, clip=0.5)})
    m = run_closed_loop(small, cfg)
    lo, hi = small.der_lower_pu, small.der_upper_pu
    for s in m.steps:
        assert np.all(s.z >= lo) and np.all(s.z <= hi)
        assert not np.any(s.z[lo == hi])
    assert any(s.odcp_status is OdcpStatus.CLAMPED_INFEASIBLE for s in m.steps)


def test_estimator_tracks_on_small_feeder(small_run):
    assert small_run.initial_rmse < 0.01
    assert small_run.avg_rmse < 0.05


@pytest.mark.parametrize("ctrl", list(Controller))
def test_every_controller_runs(small, ctrl):
    m = run_closed_loop(small, ScenarioConfig(**{**QUICK, "controller": ctrl, "duration": 20.0}))
    assert m.controller == ctrl.value and len(m.steps) == 10
    assert 0.5 < m.avg_score <= 1.0


def test_trace_signal_too_short(small, tmp_path):
    p = tmp_path / "sig.csv"
    p.write_text("0,0.1\n2,0.1\n")
    cfg = ScenarioConfig(**{**QUICK, "signal": SignalConfig(kind="trace", path=str(p))})
    with pytest.raises(SimulationError, match="samples"):
        run_closed_loop(small, cfg)


def test_trace_signal_is_scaled(small, tmp_path):
    p = tmp_path / "sig.csv"
    p.write_text("".join(f"{t},{0.5 if t < 10 else -0.5}\n" for t in range(0, 21, 2)))
    cfg = ScenarioConfig(**{**QUICK, "duration": 20.0, "signal": SignalConfig(kind="trace", path=str(p), scale=0.1)})
    m = run_closed_loop(small, cfg)
    assert [s.r for s in m.steps] == pytest.approx([0.05] * 5 + [-0.05] * 5)


def test_config_round_trip(tmp_path):
    cfg = ScenarioConfig(seed=4, ramp=RampConfig(), controller=Controller.PF_BASELINE,
                         signal=SignalConfig(std=0.1, corr_time=30.0))
    d = json.loads(json.dumps(cfg.to_dict()))
    assert ScenarioConfig.from_dict(d) == cfg
    with pytest.raises(ValueError, match="unknown"):
        ScenarioConfig.from_dict({**d, "bogus": 1})


def test_load_scenario_resolves_relative_paths(tmp_path):
    (tmp_path / "sig.csv").write_text("0,0\n")
    (tmp_path / "feeder.txt").write_text("placeholder")
    (tmp_path / "s.json").write_text(json.dumps({"feeder": "feeder.txt", "signal": {"kind": "trace", "path": "sig.csv"}}))
    cfg = load_scenario(tmp_path / "s.json")
    assert cfg.feeder == str(tmp_path / "feeder.txt")
    assert cfg.signal.path == str(tmp_path / "sig.csv")
    (tmp_path / "b.json").write_text(json.dumps({"feeder": "case33bw"}))
    assert load_scenario(tmp_path / "b.json").feeder == "case33bw"


@pytest.mark.parametrize("bad", [{"dt": 0}, {"gamma": 1.5}, {"rho": -1}, {"sigma": -0.1}, {"warmup_steps": 1},
                                 {"lf_point": "elsewhere"}])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        ScenarioConfig(**bad)


def test_records_round_trip(small_run, tmp_path):
    records.write_steps_csv(small_run, tmp_path / "steps.csv")
    rows = records.read_steps_csv(tmp_path / "steps.csv")
    assert len(rows) == len(small_run.steps)
    assert rows[3]["r_m"] == small_run.steps[3].r_m
    assert rows[3]["z_5"] == small_run.steps[3].z[4]
    records.write_lfs_csv(small_run, tmp_path / "lfs.csv")
    hat, true = records.read_lfs_csv(tmp_path / "lfs.csv")
    np.testing.assert_array_equal(hat[-1], small_run.steps[-1].lambda_hat)
    np.testing.assert_array_equal(true[0], small_run.steps[0].lambda_true)
    records.write_metrics_json(small_run, tmp_path / "m.json")
    assert records.read_metrics_json(tmp_path / "m.json")["avg_score"] == small_run.avg_score


def test_nominal_reference_point_option(small):
    cfg = ScenarioConfig(**{**QUICK, "duration": 20.0, "lf_point": "nominal"})
    m = run_closed_loop(small, dataclasses.replace(cfg, controller=Controller.LF_ACTUAL))
    truths = {tuple(s.lambda_true) for s in m.steps}
    assert len(truths) == 1
