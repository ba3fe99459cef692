import sys
from pathlib import Path

import hypothesis
import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from derflow.network import Branch, Bus, BusKind, DerSpec, NetworkModel, load_network  # noqa: E402

np.seterr(all="warn", under="ignore")

hypothesis.settings.register_profile("default", max_examples=40, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.load_profile("default")


@pytest.fixture(scope="session")
def case33():
    return load_network("case33bw")


@pytest.fixture(scope="session")
def modified33():
    return load_network("case33_modified")


def two_bus_model(r=0.01, x=0.01, p_kw=100.0, q_kvar=50.0, s_base=1000.0):
    """Slack + one PQ bus; the load is 0.1+j0.05 p.u. by default."""
    return NetworkModel(
        buses=(Bus(0, BusKind.SLACK, 0.0, 0.0, 1.0), Bus(1, BusKind.PQ, p_kw, q_kvar)),
        branches=(Branch(0, 1, r, x),),
        ders=(),
        s_base=s_base,
        v_base=12.66,
    )


@pytest.fixture
def two_bus():
    return two_bus_model()


def three_der_model():
    """Small radial feeder with three DERs, used by quick closed-loop tests."""
    buses = [Bus(0, BusKind.SLACK, 0.0, 0.0, 1.0)]
    for i in range(1, 7):
        buses.append(Bus(i, BusKind.PQ, 150.0, 60.0))
    branches = [Branch(0, 1, 0.01, 0.008), Branch(1, 2, 0.02, 0.015), Branch(2, 3, 0.03, 0.02),
                Branch(1, 4, 0.02, 0.02), Branch(4, 5, 0.03, 0.02), Branch(5, 6, 0.02, 0.03)]
    ders = [DerSpec(3, 1000, 100, -100, 0.0), DerSpec(5, 800, 80, -80, 0.0), DerSpec(6, 600, 60, -60, 0.0)]
    return NetworkModel(tuple(buses), tuple(branches), tuple(ders), 1000.0, 12.66)


def plain_odcp_input(lam, lower, upper, target, rho=1.0, r=0.0):
    """Dispatch input with no offset terms, so ``a @ z`` must equal ``target - r``."""
    from derflow.odcp import OdcpInput

    n = len(lam)
    zero = np.zeros(n)
    return OdcpInput(lambda_hat=np.asarray(lam, float), p_g0_now=zero, p_g0_prev=zero, p_d_now=zero,
                     p_d_prev=zero, p_g_prev=zero, p_t_prev=0.0, p_t0_now=float(target), r=float(r),
                     lower=np.asarray(lower, float), upper=np.asarray(upper, float), rho=rho)


def random_odcp_instance(rng, n=3, rho=1.0):
    """Random instance with Λ̂ in [0, 0.1], random bounds and a feasible right-hand side."""
    from derflow.odcp import feasible_range

    lam = rng.uniform(0.0, 0.1, n)
    upper = rng.uniform(0.02, 0.25, n)
    lower = -rng.uniform(0.02, 0.25, n)
    probe = plain_odcp_input(lam, lower, upper, 0.0, rho)
    lo, hi = feasible_range(probe)
    return plain_odcp_input(lam, lower, upper, rng.uniform(lo, hi), rho)
