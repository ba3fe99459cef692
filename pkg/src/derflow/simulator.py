"""Closed-loop regulation simulation.

Each interval of length ``dt``: draw noisy loads, read the regulation request,
dispatch the DERs with the configured controller, solve the plant, and feed the
new measurement pair to the loss-factor estimator.

All randomness comes from numpy's PCG64 generator. ``SeedSequence(seed)`` is
spawned into three child streams, in order: load noise, synthetic signal,
sensor noise.
"""
from __future__ import annotations

import csv
import enum
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import estimator as est
from .lossfactors import DEFAULT_DELTA, active_lfs, actual_total_lfs
from .network import NetworkModel
from .odcp import OdcpInput, OdcpStatus, participation_factors, pf_allocate, solve_odcp
from .powerflow import InjectionSet, PowerFlowError, admittance_matrix, solve_power_flow

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    pass


class Controller(enum.Enum):
    LF_ESTIMATED = "LfEstimated"
    LF_ACTUAL = "LfActual"
    PF_BASELINE = "PfBaseline"
    MODEL_ACTIVE_LF = "ModelActiveLf"

    @classmethod
    def parse(cls, text: str) -> "Controller":
        for c in cls:
            if c.value.lower() == text.lower() or c.name.lower() == text.lower():
                return c
        raise ValueError(f"unknown controller {text!r}; choose from {[c.value for c in cls]}")


@dataclass(frozen=True)
class SignalConfig:
    """Regulation signal source, values in p.u. of the system base.

    ``kind`` is ``"synthetic"`` (mean-reverting AR(1) noise) or ``"trace"``
    (CSV file of ``t_s,r`` rows, multiplied by ``scale``). A ``clip`` of
    ``None`` means the fleet's total upward regulation capacity.
    """

    kind: str = "synthetic"
    std: float = 0.2
    corr_time: float = 300.0
    clip: float | None = None
    path: str | None = None
    scale: float = 1.0


@dataclass(frozen=True)
class RampConfig:
    start_s: float = 60.0
    end_s: float = 120.0
    fraction: float = 0.20


@dataclass(frozen=True)
class ScenarioConfig:
    """Closed-loop scenario. Powers in p.u., times in seconds.

    ``lf_point`` selects where the reference loss factors are evaluated:
    ``"operating"`` uses the previous interval's actual injections (for the
    LfActual controller) and the current ones (for the RMSE reference);
    ``"nominal"`` uses the scheduled point with no regulation output.
    """

    dt: float = 2.0
    duration: float = 300.0
    sigma: float = 0.01
    gamma: float = est.DEFAULT_GAMMA
    rho: float = 1.0
    warmup_steps: int = 100
    seed: int = 0
    signal: SignalConfig = field(default_factory=SignalConfig)
    ramp: RampConfig | None = None
    controller: Controller = Controller.LF_ESTIMATED
    feeder: str = "case33_modified"
    ridge: float = est.DEFAULT_RIDGE
    excitation_floor: float = est.DEFAULT_EXCITATION_FLOOR
    sensor_noise: float = 0.0
    reactive_load_noise: bool = False
    lf_delta: float = DEFAULT_DELTA
    recompute_actual_lfs: bool = True
    lf_point: str = "operating"
    pf_tol: float = 1e-10
    pf_max_iter: int = 50

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.rho < 0:
            raise ValueError("rho must be non-negative")
        if self.warmup_steps < 2:
            raise ValueError("warmup_steps must be at least 2")
        if self.sensor_noise < 0:
            raise ValueError("sensor_noise must be non-negative")
        if self.lf_point not in ("nominal", "operating"):
            raise ValueError("lf_point must be 'nominal' or 'operating'")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["controller"] = self.controller.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        if "signal" in d and isinstance(d["signal"], dict):
            d["signal"] = SignalConfig(**d["signal"])
        if d.get("ramp") is not None and isinstance(d["ramp"], dict):
            d["ramp"] = RampConfig(**d["ramp"])
        if "controller" in d and isinstance(d["controller"], str):
            d["controller"] = Controller.parse(d["controller"])
        return cls(**d)


def load_scenario(path) -> ScenarioConfig:
    """Read a JSON scenario; relative feeder/trace paths resolve against its folder."""
    p = Path(path)
    d = json.loads(p.read_text(encoding="utf-8"))
    base = p.parent
    feeder = d.get("feeder")
    if feeder and (base / feeder).exists():
        d["feeder"] = str(base / feeder)
    sig = d.get("signal")
    if isinstance(sig, dict) and sig.get("path") and not Path(sig["path"]).is_absolute():
        sig["path"] = str(base / sig["path"])
    return ScenarioConfig.from_dict(d)


@dataclass(frozen=True)
class StepRecord:
    k: int
    t: float
    r: float
    r_m: float
    z: np.ndarray
    p_t: float
    p_t0: float
    losses: float
    lambda_hat: np.ndarray
    lambda_true: np.ndarray
    rmse: float
    score_so_far: float
    score_flagged: bool
    odcp_status: OdcpStatus


@dataclass
class RunMetrics:
    avg_score: float
    final_score: float
    avg_rmse: float
    max_rmse: float
    initial_rmse: float
    model_rmse: float
    score_flagged: bool
    controller: str
    steps: list[StepRecord] = field(default_factory=list, repr=False)
    der_buses: list[int] = field(default_factory=list)

    @property
    def score_series(self) -> np.ndarray:
        return np.array([s.score_so_far for s in self.steps])

    @property
    def rmse_series(self) -> np.ndarray:
        return np.array([s.rmse for s in self.steps])

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.steps])

    def summary(self) -> dict:
        return {
            "controller": self.controller,
            "avg_score": self.avg_score,
            "final_score": self.final_score,
            "avg_rmse": self.avg_rmse,
            "max_rmse": self.max_rmse,
            "initial_rmse": self.initial_rmse,
            "model_rmse": self.model_rmse,
            "score_flagged": self.score_flagged,
            "n_steps": len(self.steps),
            "score_series": [s.score_so_far for s in self.steps],
            "rmse_series": [s.rmse for s in self.steps],
        }


def performance_score(r_series, r_m_series) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative tracking score and a flag where the request is still all zero.

    ``S[k] = 1 - sum_{l<=k} |r_m[l] - r[l]| / sum_{l<=k} |r[l]|``; while the
    denominator is zero the score is reported as 1 and flagged.
    """
    r = np.asarray(r_series, dtype=float)
    rm = np.asarray(r_m_series, dtype=float)
    if r.shape != rm.shape:
        raise ValueError(f"length mismatch: {r.shape} vs {rm.shape}")
    err = np.cumsum(np.abs(rm - r))
    den = np.cumsum(np.abs(r))
    flagged = den == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(flagged, 1.0, 1.0 - err / np.where(flagged, 1.0, den))
    return s, flagged


def synthetic_signal(std: float, corr_time: float, clip: float, seed, n_steps: int, dt: float = 2.0) -> np.ndarray:
    """Stationary AR(1) sequence with standard deviation ``std`` and correlation
    time ``corr_time`` seconds, clipped to ``[-clip, clip]``.

    ``seed`` may be an int or a numpy ``Generator``.
    """
    if std < 0 or corr_time <= 0 or clip < 0:
        raise ValueError("std, clip must be non-negative and corr_time positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    phi = np.exp(-dt / corr_time)
    eps = rng.standard_normal(n_steps)
    x = np.empty(n_steps)
    innov = std * np.sqrt(max(0.0, 1.0 - phi * phi))
    prev = std * eps[0] if n_steps else 0.0
    for k in range(n_steps):
        x[k] = prev if k == 0 else phi * x[k - 1] + innov * eps[k]
    return np.clip(x, -clip, clip)


def load_signal_trace(path, dt: float = 2.0) -> np.ndarray:
    """Read a ``t_s,r`` CSV and resample it to ``dt`` by zero-order hold.

    Output sample ``k`` is the latest trace value at or before ``t0 + k*dt``.
    """
    times, vals = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                t, v = float(row[0]), float(row[1])
            except (ValueError, IndexError):
                if lineno == 1 and not times:
                    continue  # header
                raise ValueError(f"{path}:{lineno}: malformed row {row!r}") from None
            times.append(t)
            vals.append(v)
    if not times:
        raise ValueError(f"{path}: empty signal trace")
    t = np.array(times)
    if np.any(np.diff(t) <= 0):
        raise ValueError(f"{path}: time column must be strictly increasing")
    n = int(np.floor((t[-1] - t[0]) / dt + 1e-9)) + 1
    grid = t[0] + dt * np.arange(n)
    idx = np.searchsorted(t, grid + 1e-9 * dt, side="right") - 1
    return np.array(vals)[idx]


def signal_series(cfg: ScenarioConfig, model: NetworkModel, rng: np.random.Generator) -> np.ndarray:
    sig = cfg.signal
    n = cfg.n_steps
    if sig.kind == "synthetic":
        clip = float(model.der_upper_pu.sum()) if sig.clip is None else sig.clip
        return synthetic_signal(sig.std, sig.corr_time, clip, rng, n, cfg.dt)
    if sig.kind == "trace":
        if not sig.path:
            raise ValueError("trace signal needs a path")
        r = load_signal_trace(sig.path, cfg.dt) * sig.scale
        if len(r) < n:
            raise SimulationError(f"signal trace has {len(r)} samples, scenario needs {n}")
        if sig.clip is not None:
            r = np.clip(r, -sig.clip, sig.clip)
        return r[:n]
    raise ValueError(f"unknown signal kind {sig.kind!r}")


def ramp_scale(cfg: ScenarioConfig, t: float) -> float:
    if cfg.ramp is None:
        return 1.0
    rp = cfg.ramp
    if rp.end_s <= rp.start_s:
        return 1.0 + (rp.fraction if t >= rp.start_s else 0.0)
    return 1.0 + rp.fraction * min(max((t - rp.start_s) / (rp.end_s - rp.start_s), 0.0), 1.0)


class _Plant:
    """Power-flow plant with cached nominal operating points."""

    def __init__(self, model: NetworkModel, cfg: ScenarioConfig):
        self.model = model
        self.cfg = cfg
        self.ybus = admittance_matrix(model)
        self.pg0 = model.der_nominal_pu
        self._nominal: dict[float, tuple] = {}
        self._truth: dict[float, np.ndarray] = {}
        self.last = None

    def solve(self, inj: InjectionSet, step: int, warm=True):
        try:
            sol = solve_power_flow(
                self.model, inj, tol=self.cfg.pf_tol, max_iter=self.cfg.pf_max_iter,
                warm_start=self.last if warm else None, ybus=self.ybus,
            )
        except PowerFlowError as exc:
            raise SimulationError(f"plant failed at step {step}: {exc}") from exc
        if not sol.converged:
            raise SimulationError(f"plant did not converge at step {step} (mismatch {sol.mismatch:.3e})")
        self.last = sol
        return sol

    def nominal_injection(self, scale: float) -> InjectionSet:
        return InjectionSet(self.pg0 - self.model.load_p_pu * scale, -self.model.load_q_pu * scale)

    def nominal_pt(self, scale: float, step: int) -> float:
        if scale not in self._nominal:
            sol = solve_power_flow(self.model, self.nominal_injection(scale), tol=self.cfg.pf_tol,
                                   max_iter=self.cfg.pf_max_iter, ybus=self.ybus)
            if not sol.converged:
                raise SimulationError(f"nominal power flow did not converge at step {step}")
            self._nominal[scale] = sol.p_t
        return self._nominal[scale]

    def lfs_at(self, inj: InjectionSet) -> np.ndarray:
        return actual_total_lfs(self.model, inj, self.cfg.lf_delta)

    def true_lfs(self, scale: float) -> np.ndarray:
        if scale not in self._truth:
            self._truth[scale] = actual_total_lfs(self.model, self.nominal_injection(scale), self.cfg.lf_delta)
        return self._truth[scale]


def run_closed_loop(model: NetworkModel, cfg: ScenarioConfig) -> RunMetrics:
    """Simulate the regulation loop and return per-step telemetry and metrics.

    ``cfg.warmup_steps`` intervals of load-noise-only operation (no dispatch,
    not scored) precede ``t = 0``; their measurement pairs seed the estimator
    by batch weighted least squares.
    """
    n = model.n
    plant = _Plant(model, cfg)
    load_rng, signal_rng, sensor_rng = (np.random.Generator(np.random.PCG64(s))
                                        for s in np.random.SeedSequence(cfg.seed).spawn(3))
    signal = signal_series(cfg, model, signal_rng)
    lower, upper = model.der_lower_pu, model.der_upper_pu
    pf = participation_factors(lower, upper) if cfg.controller is Controller.PF_BASELINE else None
    pd_base, qd_base = model.load_p_pu, model.load_q_pu
    pg0 = plant.pg0

    def draw_loads(scale):
        nu = cfg.sigma * load_rng.standard_normal(n)
        pd = pd_base * scale * (1.0 + nu)
        qd = qd_base * scale * ((1.0 + nu) if cfg.reactive_load_noise else 1.0)
        return pd, qd

    def measure(pt):
        if cfg.sensor_noise > 0:
            return pt + cfg.sensor_noise * sensor_rng.standard_normal()
        return pt

    # warm-up: no dispatch, loads fluctuate around the t=0 nominal point
    history = []
    p_prev = pt_prev = None
    for j in range(cfg.warmup_steps):
        pd, qd = draw_loads(ramp_scale(cfg, 0.0))
        sol = plant.solve(InjectionSet(pg0 - pd, -qd), -cfg.warmup_steps + j)
        p_now, pt_now = pg0 - pd, measure(sol.p_t)
        if p_prev is not None:
            history.append(est.MeasurementPair(p_now - p_prev, pt_now - pt_prev))
        p_prev, pt_prev, pd_prev, qd_prev = p_now, pt_now, pd, qd
    # unexcited buses (no load, no DER) fall back to the lossless belief
    state = est.batch_wls_init(history, cfg.gamma, cfg.ridge, cfg.excitation_floor, prior=np.zeros(n))

    scale0 = ramp_scale(cfg, 0.0)
    truth0 = plant.true_lfs(scale0)
    model_lfs = active_lfs(model, plant.nominal_injection(scale0), cfg.lf_delta)
    initial_rmse = est.lf_rmse(state.lambda_hat, truth0)
    model_rmse = est.lf_rmse(model_lfs, truth0)
    log.info("warm-up done: initial LF RMSE %.5f (active-LF model %.5f)", initial_rmse, model_rmse)

    z_prev = np.zeros(n)
    steps: list[StepRecord] = []
    r_hist, rm_hist = [], []
    truth = truth0
    for k in range(cfg.n_steps):
        t = k * cfg.dt
        scale = ramp_scale(cfg, t)
        pt0 = plant.nominal_pt(scale, k)
        if cfg.recompute_actual_lfs and cfg.lf_point == "nominal":
            truth = plant.true_lfs(scale)
        pd, qd = draw_loads(scale)
        r = float(signal[k])

        if cfg.controller is Controller.LF_ESTIMATED:
            lam = state.lambda_hat
        elif cfg.controller is Controller.LF_ACTUAL:
            lam = truth if cfg.lf_point == "nominal" else plant.lfs_at(InjectionSet(p_prev, -qd_prev))
        else:
            lam = model_lfs
        inp = OdcpInput(
            lambda_hat=lam, p_g0_now=pg0, p_g0_prev=pg0, p_d_now=pd, p_d_prev=pd_prev,
            p_g_prev=z_prev, p_t_prev=pt_prev, p_t0_now=pt0, r=r, lower=lower, upper=upper,
            rho=cfg.rho, p_d0_now=pd_base * scale,
        )
        dispatch = pf_allocate(inp, pf) if pf is not None else solve_odcp(inp)
        z = dispatch.z

        p_now = pg0 + z - pd
        sol = plant.solve(InjectionSet(p_now, -qd), k)
        pt_now = measure(sol.p_t)
        state = est.rwls_update(state, est.MeasurementPair(p_now - p_prev, pt_now - pt_prev))
        if cfg.lf_point != "nominal":
            truth = plant.lfs_at(InjectionSet(p_now, -qd))

        r_m = pt0 - sol.p_t
        r_hist.append(r)
        rm_hist.append(r_m)
        s, flagged = performance_score(r_hist, rm_hist)
        steps.append(StepRecord(
            k=k, t=t, r=r, r_m=r_m, z=z, p_t=sol.p_t, p_t0=pt0, losses=sol.losses,
            lambda_hat=state.lambda_hat, lambda_true=truth, rmse=est.lf_rmse(state.lambda_hat, truth),
            score_so_far=float(s[-1]), score_flagged=bool(flagged[-1]), odcp_status=dispatch.status,
        ))
        p_prev, pt_prev, pd_prev, qd_prev, z_prev = p_now, pt_now, pd, qd, z

    scores, flags = performance_score(r_hist, rm_hist)
    rmse = np.array([s.rmse for s in steps])
    return RunMetrics(
        avg_score=float(scores.mean()),
        final_score=float(scores[-1]),
        avg_rmse=float(rmse.mean()),
        max_rmse=float(rmse.max()),
        initial_rmse=initial_rmse,
        model_rmse=model_rmse,
        score_flagged=bool(flags.any()),
        controller=cfg.controller.value,
        steps=steps,
        der_buses=[int(b) for b in model.der_buses],
    )
