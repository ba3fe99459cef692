"""Polar Newton-Raphson AC power flow for a single-phase equivalent feeder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import BusKind, NetworkModel


class PowerFlowError(RuntimeError):
    pass


class SingularJacobianError(PowerFlowError):
    pass


@dataclass(frozen=True)
class InjectionSet:
    """Net injections at buses 1..N in p.u. (generation minus load).

    At PV buses ``q`` is the uncontrolled part of the reactive injection; the
    voltage controller adds whatever is needed on top of it.
    """

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        if self.p.shape != self.q.shape or self.p.ndim != 1:
            raise ValueError("p and q must be 1-D vectors of equal length")

    @classmethod
    def zeros(cls, n: int) -> "InjectionSet":
        return cls(np.zeros(n), np.zeros(n))

    @classmethod
    def nominal(cls, model: NetworkModel) -> "InjectionSet":
        return cls(model.der_nominal_pu - model.load_p_pu, -model.load_q_pu)


@dataclass(frozen=True)
class PowerFlowSolution:
    theta: np.ndarray  # rad, buses 0..N
    v: np.ndarray  # p.u., buses 0..N
    p_t: float  # active injection at the feeder head
    q_t: float
    losses: float
    q_injected_pv: np.ndarray  # reactive support at PV buses, ordered as model PV indices
    iterations: int
    converged: bool
    mismatch: float

    @property
    def voltage(self) -> np.ndarray:
        return self.v * np.exp(1j * self.theta)


def admittance_matrix(model: NetworkModel) -> np.ndarray:
    n = len(model.buses)
    y = np.zeros((n, n), dtype=complex)
    for br in model.branches:
        ys = 1.0 / complex(br.resistance, br.reactance)
        f, t = br.from_bus, br.to_bus
        y[f, f] += ys
        y[t, t] += ys
        y[f, t] -= ys
        y[t, f] -= ys
    return y


def _jacobian(ybus, vc, pvpq, pq):
    # complex-form partials of S = V conj(Y V)
    ibus = ybus @ vc
    vnorm = vc / np.abs(vc)
    ds_dvm = np.diag(vc) @ np.conj(ybus @ np.diag(vnorm)) + np.diag(np.conj(ibus) * vnorm)
    ds_dva = 1j * np.diag(vc) @ np.conj(np.diag(ibus) - ybus @ np.diag(vc))
    j11 = ds_dva[np.ix_(pvpq, pvpq)].real
    j12 = ds_dvm[np.ix_(pvpq, pq)].real
    j21 = ds_dva[np.ix_(pq, pvpq)].imag
    j22 = ds_dvm[np.ix_(pq, pq)].imag
    return np.block([[j11, j12], [j21, j22]])


def solve_power_flow(
    model: NetworkModel,
    inj: InjectionSet,
    tol: float = 1e-10,
    max_iter: int = 50,
    warm_start: PowerFlowSolution | None = None,
    ybus: np.ndarray | None = None,
) -> PowerFlowSolution:
    """Solve the power-flow equations by Newton-Raphson.

    Slack bus 0 holds its voltage phasor, PV buses hold |V| with unlimited
    reactive support, PQ buses take ``inj`` as given. Returns a solution with
    ``converged=False`` if the mismatch is still above ``tol`` after
    ``max_iter`` iterations. Raises :class:`SingularJacobianError` when a
    Newton step cannot be computed.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    n = model.n
    if inj.p.shape != (n,):
        raise ValueError(f"injection length {inj.p.shape[0]} does not match N={n}")
    if ybus is None:
        ybus = admittance_matrix(model)

    kinds = [b.kind for b in model.buses]
    pv = np.array([i for i, k in enumerate(kinds) if k is BusKind.PV], dtype=int)
    pq = np.array([i for i, k in enumerate(kinds) if k is BusKind.PQ], dtype=int)
    pvpq = np.r_[pv, pq]
    pvpq.sort()
    npvpq = len(pvpq)

    s_spec = np.zeros(n + 1, dtype=complex)
    s_spec[1:] = inj.p + 1j * inj.q

    if warm_start is not None:
        vm = warm_start.v.copy()
        va = warm_start.theta.copy()
    else:
        vm = np.ones(n + 1)
        va = np.zeros(n + 1)
    for i, k in enumerate(kinds):
        if k is not BusKind.PQ:
            vm[i] = model.buses[i].v_setpoint

    def mismatch(vc):
        mis = vc * np.conj(ybus @ vc) - s_spec
        return np.r_[mis[pvpq].real, mis[pq].imag]

    vc = vm * np.exp(1j * va)
    f = mismatch(vc)
    err = np.max(np.abs(f)) if f.size else 0.0
    it = 0
    while err > tol and it < max_iter:
        jac = _jacobian(ybus, vc, pvpq, pq)
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobianError(f"singular Jacobian at iteration {it}") from exc
        if not np.all(np.isfinite(dx)):
            raise SingularJacobianError(f"non-finite Newton step at iteration {it}")
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:]
        vc = vm * np.exp(1j * va)
        f = mismatch(vc)
        err = np.max(np.abs(f))
        it += 1

    s_bus = vc * np.conj(ybus @ vc)
    p_t = float(s_bus[0].real)
    q_t = float(s_bus[0].imag)
    losses = p_t + float(inj.p.sum())
    return PowerFlowSolution(
        theta=np.angle(vc),
        v=np.abs(vc),
        p_t=p_t,
        q_t=q_t,
        losses=losses,
        q_injected_pv=s_bus[pv].imag - s_spec[pv].imag,
        iterations=it,
        converged=bool(err <= tol),
        mismatch=float(err),
    )


def feeder_head(model: NetworkModel, inj: InjectionSet, **opts) -> tuple[float, float]:
    sol = solve_power_flow(model, inj, **opts)
    if not sol.converged:
        raise PowerFlowError(f"power flow did not converge (mismatch {sol.mismatch:.3e})")
    return sol.p_t, sol.losses


def branch_losses(model: NetworkModel, sol: PowerFlowSolution) -> np.ndarray:
    """Series I^2 R loss on each branch, in p.u."""
    vc = sol.voltage
    out = np.empty(len(model.branches))
    for k, br in enumerate(model.branches):
        i = (vc[br.from_bus] - vc[br.to_bus]) / complex(br.resistance, br.reactance)
        out[k] = br.resistance * abs(i) ** 2
    return out
