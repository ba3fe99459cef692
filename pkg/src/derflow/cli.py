"""Command-line entry point: ``derflow <command> ...``.

Commands
--------
run          closed-loop simulation -> steps.csv, metrics.json, lfs.csv
compare      same scenario under every controller -> compare.csv
compute-lfs  active / reactive / total loss factors at the nominal point
estimate     offline loss-factor estimation from a CSV of measurement pairs
dispatch     one-shot dispatch from a JSON problem file (kW in, kW out)

Set ``DERFLOW_LOG`` (e.g. ``INFO``, ``DEBUG``) for diagnostics on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import estimator as est
from . import records
from .lossfactors import DEFAULT_DELTA, loss_factor_set
from .network import FeederFormatError, NetworkValidationError, load_network
from .odcp import OdcpInput, participation_factors, pf_allocate, solve_odcp
from .powerflow import InjectionSet
from .simulator import Controller, ScenarioConfig, load_scenario, run_closed_loop

log = logging.getLogger("derflow")


class CliError(Exception):
    pass


def _prepare_out(out: Path, names: list[str], force: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    clash = [n for n in names if (out / n).exists()]
    if clash and not force:
        raise CliError(f"{out}: refusing to overwrite {', '.join(clash)} (use --force)")


def _scenario(args) -> ScenarioConfig:
    cfg = load_scenario(args.config) if args.config else ScenarioConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "controller", None):
        cfg = replace(cfg, controller=Controller.parse(args.controller))
    return cfg


def cmd_run(args) -> int:
    cfg = _scenario(args)
    model = load_network(cfg.feeder)
    out = Path(args.out)
    _prepare_out(out, ["steps.csv", "metrics.json", "lfs.csv"], args.force)
    metrics = run_closed_loop(model, cfg)
    records.write_steps_csv(metrics, out / "steps.csv")
    records.write_lfs_csv(metrics, out / "lfs.csv")
    records.write_metrics_json(metrics, out / "metrics.json", extra={"config": cfg.to_dict()})
    print(f"{cfg.controller.value}: avg_score={metrics.avg_score:.5f} avg_rmse={metrics.avg_rmse:.5f} -> {out}")
    return 0


def cmd_compare(args) -> int:
    cfg = _scenario(args)
    model = load_network(cfg.feeder)
    out = Path(args.out)
    name = "compare." + args.format
    _prepare_out(out, [name], args.force)
    rows = []
    for ctrl in Controller:
        m = run_closed_loop(model, replace(cfg, controller=ctrl))
        rows.append({
            "controller": ctrl.value,
            "avg_score": m.avg_score,
            "avg_rmse": m.avg_rmse,
            "final_score": m.final_score,
            "max_rmse": m.max_rmse,
            "score_flagged": int(m.score_flagged),
        })
        print(f"{ctrl.value:>14}: avg_score={m.avg_score:.5f} avg_rmse={m.avg_rmse:.5f}")
    records.write_table(rows, out / name, args.format)
    return 0


def cmd_compute_lfs(args) -> int:
    if args.feeder:
        model = load_network(args.feeder)
    else:
        model = load_network(_scenario(args).feeder)
    lfs = loss_factor_set(model, InjectionSet.nominal(model), args.delta)
    rows = [
        {"bus": i, "active": float(a), "reactive": float(q), "total": float(t)}
        for i, (a, q, t) in enumerate(zip(lfs.active, lfs.reactive, lfs.total), start=1)
    ]
    if args.out:
        out = Path(args.out)
        name = "lfs_nominal." + args.format
        _prepare_out(out, [name], args.force)
        records.write_table(rows, out / name, args.format)
    else:
        sys.stdout.write(records.format_table(rows, args.format))
    return 0


def read_measurements(path) -> list[est.MeasurementPair]:
    """CSV rows ``step, dP_1..dP_N, dPt`` (header optional)."""
    pairs = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                vals = [float(v) for v in row]
            except ValueError:
                if lineno == 1:
                    continue
                raise CliError(f"{path}:{lineno}: malformed row") from None
            if len(vals) < 3:
                raise CliError(f"{path}:{lineno}: need step, at least one dP, and dPt")
            pairs.append(est.MeasurementPair(np.array(vals[1:-1]), vals[-1]))
    if not pairs:
        raise CliError(f"{path}: no measurements")
    n = len(pairs[0].delta_p)
    if any(len(p.delta_p) != n for p in pairs):
        raise CliError(f"{path}: inconsistent row widths")
    return pairs


def cmd_estimate(args) -> int:
    pairs = read_measurements(args.input)
    n = len(pairs[0].delta_p)
    k0 = args.init_rows if args.init_rows is not None else min(len(pairs), 2 * n)
    if not 1 <= k0 <= len(pairs):
        raise CliError(f"--init-rows must be in 1..{len(pairs)}")
    state = est.batch_wls_init(pairs[:k0], args.gamma, args.ridge, prior=np.zeros(n) if args.lossless_prior else None)
    rows = [(k0 - 1, state.lambda_hat)]
    for k, m in enumerate(pairs[k0:], start=k0):
        state = est.rwls_update(state, m)
        rows.append((k, state.lambda_hat))
    table = [{"step": k, **{f"lambda_{i}": float(v) for i, v in enumerate(lam, start=1)}} for k, lam in rows]
    out = Path(args.out)
    name = "estimates." + args.format
    _prepare_out(out, [name], args.force)
    records.write_table(table, out / name, args.format)
    print(f"{len(rows)} estimates -> {out / name}")
    return 0


def _vec(d, key, n, s_base, default=0.0):
    v = d.get(key)
    if v is None:
        return np.full(n, default)
    arr = np.asarray(v, dtype=float)
    if arr.shape != (n,):
        raise CliError(f"'{key}' must have length {n}")
    return arr / s_base


def cmd_dispatch(args) -> int:
    """Problem JSON: powers in kW, loss factors dimensionless.

    Required: ``lambda_hat``, ``lower``, ``upper``, ``r``. Optional (default 0):
    ``p_g0_now``, ``p_g0_prev``, ``p_d_now``, ``p_d_prev``, ``p_g_prev``,
    ``p_d0_now``, ``p_t_prev``, ``p_t0_now``; ``rho`` (1.0, per-unit),
    ``s_base_kva`` (1000), ``method`` (``odcp`` or ``pf``).
    """
    d = json.loads(Path(args.problem).read_text(encoding="utf-8"))
    try:
        lam = np.asarray(d["lambda_hat"], dtype=float)
        n = lam.shape[0]
        sb = float(d.get("s_base_kva", 1000.0))
        inp = OdcpInput(
            lambda_hat=lam,
            p_g0_now=_vec(d, "p_g0_now", n, sb),
            p_g0_prev=_vec(d, "p_g0_prev", n, sb),
            p_d_now=_vec(d, "p_d_now", n, sb),
            p_d_prev=_vec(d, "p_d_prev", n, sb),
            p_g_prev=_vec(d, "p_g_prev", n, sb),
            p_t_prev=float(d.get("p_t_prev", 0.0)) / sb,
            p_t0_now=float(d.get("p_t0_now", 0.0)) / sb,
            r=float(d["r"]) / sb,
            lower=_vec(d, "lower", n, sb),
            upper=_vec(d, "upper", n, sb),
            rho=float(d.get("rho", args.rho)),
            p_d0_now=_vec(d, "p_d0_now", n, sb) if "p_d0_now" in d else None,
        )
    except KeyError as exc:
        raise CliError(f"dispatch problem is missing {exc}") from None
    method = d.get("method", "odcp")
    if method == "pf":
        sol = pf_allocate(inp, participation_factors(inp.lower, inp.upper))
    elif method == "odcp":
        sol = solve_odcp(inp)
    else:
        raise CliError(f"unknown method {method!r}")
    result = {
        "z_kw": [float(v) * sb for v in sol.z],
        "multiplier": None if np.isnan(sol.multiplier) else sol.multiplier,
        "status": sol.status.value,
        "achieved_rhs_kw": sol.achieved_rhs * sb,
        "required_rhs_kw": sol.required_rhs * sb,
    }
    text = json.dumps(result, indent=2) + "\n"
    if args.out:
        out = Path(args.out)
        if out.exists() and not args.force:
            raise CliError(f"refusing to overwrite {out} (use --force)")
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="derflow", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="scenario JSON file")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--seed", type=int, help="override the scenario seed")
        sp.add_argument("--controller", help="LfEstimated | LfActual | PfBaseline | ModelActiveLf")
        sp.add_argument("--format", choices=["csv", "json"], default="csv")
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")

    sp = sub.add_parser("run", help="run one closed-loop scenario")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="run a scenario under all controllers")
    common(sp)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("compute-lfs", help="perturbation loss factors at the nominal point")
    common(sp, out_required=False)
    sp.add_argument("--feeder", help="feeder file or bundled name (overrides the config)")
    sp.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    sp.set_defaults(func=cmd_compute_lfs)

    sp = sub.add_parser("estimate", help="offline loss-factor estimation")
    common(sp)
    sp.add_argument("--input", required=True, help="CSV of step, dP_1..dP_N, dPt")
    sp.add_argument("--gamma", type=float, default=est.DEFAULT_GAMMA)
    sp.add_argument("--ridge", type=float, default=est.DEFAULT_RIDGE)
    sp.add_argument("--init-rows", type=int, help="rows used for the batch initialisation (default min(rows, 2N))")
    sp.add_argument("--lossless-prior", action="store_true", help="shrink unexcited buses toward 0 instead of 1")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("dispatch", help="solve one dispatch problem from JSON")
    sp.add_argument("--problem", required=True)
    sp.add_argument("--out", help="result JSON path (default stdout)")
    sp.add_argument("--rho", type=float, default=1.0)
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_dispatch)
    return p


def main(argv=None) -> int:
    level = os.environ.get("DERFLOW_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, FeederFormatError, NetworkValidationError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"derflow {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
