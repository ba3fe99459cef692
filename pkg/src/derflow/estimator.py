"""Measurement-based estimation of total loss factors.

The feeder-head response to a change in net injections is modelled as
``dPt = (lam - 1) @ dP``. ``lam`` is fitted by exponentially weighted least
squares: a batch solve seeds the estimate, rank-one updates track it.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

DEFAULT_GAMMA = 0.97
DEFAULT_RIDGE = 1e-8
DEFAULT_EXCITATION_FLOOR = 1e-6
MAX_CONDITION = 1e14


class EstimatorError(ValueError):
    pass


@dataclass(frozen=True)
class MeasurementPair:
    delta_p: np.ndarray  # P[l] - P[l-1], p.u.
    delta_pt: float  # Pt[l] - Pt[l-1], p.u.

    def __post_init__(self):
        dp = np.asarray(self.delta_p, dtype=float)
        if not (np.all(np.isfinite(dp)) and np.isfinite(self.delta_pt)):
            raise ValueError("measurement contains non-finite values")
        object.__setattr__(self, "delta_p", dp)
        object.__setattr__(self, "delta_pt", float(self.delta_pt))


@dataclass(frozen=True)
class EstimatorState:
    lambda_hat: np.ndarray
    r_matrix: np.ndarray
    gamma: float = DEFAULT_GAMMA
    updates_seen: int = 0
    excitation_floor: float = DEFAULT_EXCITATION_FLOOR


def batch_wls_init(
    history,
    gamma: float = DEFAULT_GAMMA,
    ridge: float = DEFAULT_RIDGE,
    excitation_floor: float = DEFAULT_EXCITATION_FLOOR,
    prior=None,
) -> EstimatorState:
    """Weighted least-squares fit of the loss factors over a measurement history.

    The newest pair carries weight 1 and each older one a further factor of
    ``gamma``, which is the weighting the recursive update continues.
    ``ridge`` adds ``ridge * I`` to the information matrix and shrinks the fit
    toward ``prior`` (default: all ones, i.e. a zero feeder-head response).
    Directions the history never excites keep the prior value.
    """
    history = list(history)
    if not history:
        raise EstimatorError("history must contain at least one measurement")
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    a = np.vstack([m.delta_p for m in history])
    b = np.array([m.delta_pt for m in history])
    k, n = a.shape
    w = gamma ** np.arange(k - 1, -1, -1, dtype=float)
    info = a.T @ (w[:, None] * a) + ridge * np.eye(n)
    if not np.all(np.isfinite(info)) or np.linalg.cond(info) > MAX_CONDITION:
        raise EstimatorError("weighted information matrix is numerically singular")
    r = np.linalg.inv(info)
    r = 0.5 * (r + r.T)
    rhs = a.T @ (w * b)
    if prior is not None:
        rhs = rhs + ridge * (np.asarray(prior, dtype=float) - 1.0)
    lam = 1.0 + np.linalg.solve(info, rhs)
    return EstimatorState(lam, r, gamma, 0, excitation_floor)


def rwls_update(state: EstimatorState, m: MeasurementPair) -> EstimatorState:
    """One recursive weighted least-squares step with forgetting factor gamma.

    Pairs whose injection change is below the excitation floor (infinity
    norm) are skipped; the state is returned unchanged.
    """
    dp = m.delta_p
    if np.max(np.abs(dp), initial=0.0) < state.excitation_floor:
        return state
    g = state.gamma
    r_prev = state.r_matrix
    rdp = r_prev @ dp
    r_new = (r_prev - np.outer(rdp, rdp) / (g + dp @ rdp)) / g
    r_new = 0.5 * (r_new + r_new.T)
    innovation = m.delta_pt - dp @ (state.lambda_hat - 1.0)
    lam = state.lambda_hat + r_new @ dp * innovation
    return replace(state, lambda_hat=lam, r_matrix=r_new, updates_seen=state.updates_seen + 1)


def lf_rmse(lambda_hat, lambda_true) -> float:
    a = np.asarray(lambda_hat, dtype=float)
    b = np.asarray(lambda_true, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))
