"""Per-interval DER dispatch.

:func:`solve_odcp` allocates regulation power with a loss-aware quadratic
program::

    minimize    lam @ dP + rho/2 * ||z||^2
    subject to  (lam - 1) @ dP == (Pt0[k] - r[k]) - Pt[k-1]
                dP = z + c
                lower <= z <= upper

where ``c`` collects the known nominal/load/previous-dispatch terms of the
injection change. :func:`pf_allocate` is the lossless participation-factor
baseline.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class OdcpStatus(enum.Enum):
    OPTIMAL = "Optimal"
    CLAMPED_INFEASIBLE = "ClampedInfeasible"


@dataclass(frozen=True)
class OdcpInput:
    lambda_hat: np.ndarray
    p_g0_now: np.ndarray
    p_g0_prev: np.ndarray
    p_d_now: np.ndarray
    p_d_prev: np.ndarray
    p_g_prev: np.ndarray
    p_t_prev: float
    p_t0_now: float
    r: float
    lower: np.ndarray
    upper: np.ndarray
    rho: float = 1.0
    # nominal loads of interval k; only the participation-factor baseline reads it
    p_d0_now: np.ndarray | None = None

    def __post_init__(self):
        n = None
        for name in ("lambda_hat", "p_g0_now", "p_g0_prev", "p_d_now", "p_d_prev", "p_g_prev", "lower", "upper"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 1:
                raise ValueError(f"{name} must be a vector")
            n = arr.shape[0] if n is None else n
            if arr.shape[0] != n:
                raise ValueError(f"{name} has length {arr.shape[0]}, expected {n}")
            if np.any(np.isnan(arr)):
                raise ValueError(f"{name} contains NaN")
            object.__setattr__(self, name, arr)
        if self.p_d0_now is not None:
            object.__setattr__(self, "p_d0_now", np.asarray(self.p_d0_now, dtype=float))
        for name in ("p_t_prev", "p_t0_now", "r", "rho"):
            if np.isnan(getattr(self, name)):
                raise ValueError(f"{name} is NaN")
        if np.any(self.lower > 0) or np.any(self.upper < 0):
            raise ValueError("bounds must satisfy lower <= 0 <= upper")
        if self.rho < 0:
            raise ValueError("rho must be non-negative")

    @property
    def coefficients(self) -> np.ndarray:
        """Equality coefficient vector ``a = lambda_hat - 1``."""
        return self.lambda_hat - 1.0

    @property
    def offset(self) -> np.ndarray:
        """``c`` such that the injection change is ``z + c``."""
        return (self.p_g0_now - self.p_d_now) - (self.p_g0_prev + self.p_g_prev - self.p_d_prev)

    @property
    def required_rhs(self) -> float:
        return (self.p_t0_now - self.r) - self.p_t_prev

    @property
    def target(self) -> float:
        """Value ``a @ z`` must take."""
        return self.required_rhs - self.coefficients @ self.offset

    def objective(self, z) -> float:
        return float(self.lambda_hat @ (np.asarray(z) + self.offset) + 0.5 * self.rho * np.dot(z, z))


@dataclass(frozen=True)
class OdcpSolution:
    z: np.ndarray
    multiplier: float
    status: OdcpStatus
    achieved_rhs: float  # (lambda_hat - 1) @ dP actually met
    required_rhs: float


def feasible_range(inp: OdcpInput) -> tuple[float, float]:
    """Interval of ``a @ z`` reachable inside the box."""
    a = inp.coefficients
    lo = np.where(a >= 0, a * inp.lower, a * inp.upper).sum()
    hi = np.where(a >= 0, a * inp.upper, a * inp.lower).sum()
    return float(lo), float(hi)


def _clip_response(lam, q, a, lo, hi, rho):
    # minimizer of q@z + rho/2 |z|^2 - lam * a@z over the box; lam may be a column of values
    return np.clip((lam * a - q) / rho, lo, hi)


def _dual_solve(q, a, d, lo, hi, rho):
    """Minimize ``q@z + rho/2 |z|^2`` s.t. ``a@z = d``, box, for ``rho > 0``.

    ``a @ z(lam)`` is nondecreasing and piecewise linear in the multiplier with
    kinks where a coordinate hits a bound. The kinks are bracketed by bisection
    over their sorted values; inside the final segment the map is linear and is
    inverted exactly. Returns ``(z, lam)``; ``d`` must be in the reachable range.
    """
    nz = a != 0
    if not np.any(nz):
        return np.clip(-q / rho, lo, hi), 0.0
    kinks = np.unique(np.r_[(rho * lo[nz] + q[nz]) / a[nz], (rho * hi[nz] + q[nz]) / a[nz]])

    def g(lam):
        return a @ _clip_response(lam, q, a, lo, hi, rho)

    if d <= g(kinks[0]):
        lam = kinks[0]
    elif d >= g(kinks[-1]):
        lam = kinks[-1]
    else:
        i, j = 0, len(kinks) - 1  # invariant: g(kinks[i]) < d <= g(kinks[j])
        while j - i > 1:
            mid = (i + j) // 2
            if g(kinks[mid]) < d:
                i = mid
            else:
                j = mid
        gi, gj = g(kinks[i]), g(kinks[j])
        lam = kinks[i] + (d - gi) * (kinks[j] - kinks[i]) / (gj - gi)
    return _clip_response(lam, q, a, lo, hi, rho), float(lam)


def _lp_min_norm(q, a, d, lo, hi, tie_tol=1e-12):
    # rho -> 0 limit: bang-bang away from ties, minimum-norm split among tied coordinates
    nz = a != 0
    z = np.where(q > 0, lo, np.where(q < 0, hi, 0.0))  # coordinates the equality cannot see
    if not np.any(nz):
        return z, 0.0
    bps = np.unique(q[nz] / a[nz])

    def side(lam, eps):
        s = lam * a - q + eps * a
        return np.where(s > 0, hi, lo)

    lam = bps[-1]
    for b in bps:  # g is a nondecreasing step function; first kink whose right limit reaches d
        if a[nz] @ side(b, tie_tol)[nz] >= d:
            lam = b
            break
    tied = nz & (np.abs(lam * a - q) <= tie_tol * max(1.0, abs(lam)))
    z[nz & ~tied] = side(lam, 0.0)[nz & ~tied]
    if np.any(tied):
        rest = d - a[~tied & nz] @ z[~tied & nz]
        zt, _ = _dual_solve(np.zeros(tied.sum()), a[tied], rest, lo[tied], hi[tied], 1.0)
        z[tied] = zt
    return z, float(lam)


def solve_odcp(inp: OdcpInput, tol: float = 1e-10) -> OdcpSolution:
    """Solve the loss-aware dispatch QP for one interval.

    If the required balance lies outside what the box can reach, the box
    extreme on the needed side is returned with status ``ClampedInfeasible``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    a = inp.coefficients
    lo, hi = inp.lower, inp.upper
    q = inp.lambda_hat
    d = inp.target
    gmin, gmax = feasible_range(inp)

    status = OdcpStatus.OPTIMAL
    if d < gmin - tol or d > gmax + tol:
        status = OdcpStatus.CLAMPED_INFEASIBLE
        d = gmin if d < gmin else gmax
    else:
        d = min(max(d, gmin), gmax)

    if inp.rho > 0:
        z, lam = _dual_solve(q, a, d, lo, hi, inp.rho)
    else:
        z, lam = _lp_min_norm(q, a, d, lo, hi)
    z = np.clip(z, lo, hi)
    return OdcpSolution(
        z=z,
        multiplier=lam,
        status=status,
        achieved_rhs=float(a @ (z + inp.offset)),
        required_rhs=inp.required_rhs,
    )


def participation_factors(lower, upper) -> np.ndarray:
    """Shares proportional to each DER's regulation capacity (``upper``)."""
    cap = np.asarray(upper, dtype=float)
    if cap.sum() <= 0:
        raise ValueError("no regulation capacity")
    return cap / cap.sum()


def pf_allocate(inp: OdcpInput, pf) -> OdcpSolution:
    """Lossless baseline: share regulation plus load deviation by fixed factors."""
    pf = np.asarray(pf, dtype=float)
    if pf.shape != inp.lambda_hat.shape:
        raise ValueError("participation factor vector has the wrong length")
    if np.any(pf < 0) or abs(pf.sum() - 1.0) > 1e-9:
        raise ValueError("participation factors must be non-negative and sum to 1")
    p_d0 = inp.p_d_now if inp.p_d0_now is None else inp.p_d0_now
    total = inp.r + float(np.sum(inp.p_d_now - p_d0))
    raw = pf * total
    z = np.clip(raw, inp.lower, inp.upper)
    clipped = bool(np.any(z != raw))
    a = inp.coefficients
    return OdcpSolution(
        z=z,
        multiplier=float("nan"),
        status=OdcpStatus.CLAMPED_INFEASIBLE if clipped else OdcpStatus.OPTIMAL,
        achieved_rhs=float(a @ (z + inp.offset)),
        required_rhs=inp.required_rhs,
    )


def kkt_residuals(inp: OdcpInput, sol: OdcpSolution) -> dict[str, float]:
    """Stationarity, bound-sign, and equality residuals of a dispatch solution."""
    a = inp.coefficients
    z = sol.z
    grad = inp.rho * z + inp.lambda_hat - sol.multiplier * a
    span = np.maximum(inp.upper - inp.lower, 1.0)
    at_hi = (inp.upper - z) <= 1e-12 * span
    at_lo = (z - inp.lower) <= 1e-12 * span
    fixed = inp.upper == inp.lower
    free = ~(at_hi | at_lo)
    stat = np.abs(grad[free]).max(initial=0.0)
    # at an upper bound the gradient must be <= 0, at a lower bound >= 0
    sign_hi = np.maximum(grad[at_hi & ~fixed], 0).max(initial=0.0)
    sign_lo = np.maximum(-grad[at_lo & ~fixed], 0).max(initial=0.0)
    return {
        "stationarity": float(stat),
        "bound_sign": float(max(sign_hi, sign_lo)),
        "equality": float(abs(a @ (z + inp.offset) - inp.required_rhs)),
        "box": float(max(np.maximum(inp.lower - z, 0).max(initial=0.0), np.maximum(z - inp.upper, 0).max(initial=0.0))),
    }
