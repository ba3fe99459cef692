"""Loss factors of the plant obtained by perturbing its power flow.

Three flavours are computed with central differences of the total losses:

* total LFs: perturb active injections with the voltage controllers active, so
  the reactive response of the PV buses is folded in;
* active LFs: perturb active injections with every PV bus frozen as PQ at the
  base-case reactive output;
* reactive LFs: same frozen model, perturbing reactive injections.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import BusKind, NetworkModel
from .powerflow import InjectionSet, PowerFlowError, admittance_matrix, solve_power_flow

DEFAULT_DELTA = 1e-4


@dataclass(frozen=True)
class LossFactorSet:
    active: np.ndarray
    reactive: np.ndarray
    total: np.ndarray


def _solve(model, inj, ybus, warm, tol, max_iter):
    sol = solve_power_flow(model, inj, tol=tol, max_iter=max_iter, warm_start=warm, ybus=ybus)
    if not sol.converged:
        raise PowerFlowError(f"perturbed power flow did not converge (mismatch {sol.mismatch:.3e})")
    return sol


def _central_differences(model, base_inj, delta, which, tol, max_iter):
    if not delta > 0:
        raise ValueError("delta must be positive")
    ybus = admittance_matrix(model)
    base = _solve(model, base_inj, ybus, None, tol, max_iter)
    out = np.empty(model.n)
    for i in range(model.n):
        vals = []
        for sign in (1.0, -1.0):
            p, q = base_inj.p.copy(), base_inj.q.copy()
            (p if which == "p" else q)[i] += sign * delta
            vals.append(_solve(model, InjectionSet(p, q), ybus, base, tol, max_iter).losses)
        out[i] = (vals[0] - vals[1]) / (2 * delta)
    return out


def frozen_reactive_model(model: NetworkModel, base_inj: InjectionSet, tol=1e-11, max_iter=50):
    """PQ-only copy of ``model`` plus injections reproducing the base operating point."""
    base = _solve(model, base_inj, None, None, tol, max_iter)
    q = base_inj.q.copy()
    pv = model.indices(BusKind.PV)
    q[pv - 1] += base.q_injected_pv
    return model.without_voltage_control(), InjectionSet(base_inj.p.copy(), q)


def actual_total_lfs(model, base_inj, delta=DEFAULT_DELTA, tol=1e-11, max_iter=50) -> np.ndarray:
    return _central_differences(model, base_inj, delta, "p", tol, max_iter)


def active_lfs(model, base_inj, delta=DEFAULT_DELTA, tol=1e-11, max_iter=50) -> np.ndarray:
    frozen, inj = frozen_reactive_model(model, base_inj, tol, max_iter)
    return _central_differences(frozen, inj, delta, "p", tol, max_iter)


def reactive_lfs(model, base_inj, delta=DEFAULT_DELTA, tol=1e-11, max_iter=50) -> np.ndarray:
    frozen, inj = frozen_reactive_model(model, base_inj, tol, max_iter)
    return _central_differences(frozen, inj, delta, "q", tol, max_iter)


def loss_factor_set(model, base_inj, delta=DEFAULT_DELTA, tol=1e-11, max_iter=50) -> LossFactorSet:
    return LossFactorSet(
        active=active_lfs(model, base_inj, delta, tol, max_iter),
        reactive=reactive_lfs(model, base_inj, delta, tol, max_iter),
        total=actual_total_lfs(model, base_inj, delta, tol, max_iter),
    )
