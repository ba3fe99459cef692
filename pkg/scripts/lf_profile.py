"""Active, reactive and total loss factors along a feeder at its nominal point.

    python scripts/lf_profile.py --feeder case33_modified
"""
import argparse

from derflow.lossfactors import loss_factor_set
from derflow.network import load_network
from derflow.powerflow import InjectionSet


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--feeder", default="case33_modified")
    ap.add_argument("--delta", type=float, default=1e-4)
    args = ap.parse_args()

    model = load_network(args.feeder)
    lfs = loss_factor_set(model, InjectionSet.nominal(model), args.delta)
    print(f"{'bus':>4} {'kind':>6} {'active':>10} {'reactive':>10} {'total':>10}")
    for i, bus in enumerate(model.buses[1:]):
        print(f"{bus.id:>4} {bus.kind.value:>6} {lfs.active[i]:>10.5f} {lfs.reactive[i]:>10.5f} {lfs.total[i]:>10.5f}")
    gap = abs(lfs.total - lfs.active)
    print(f"max |total - active| = {gap.max():.4f} at bus {model.buses[1 + gap.argmax()].id}")


if __name__ == "__main__":
    main()
