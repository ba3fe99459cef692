"""Writers and readers for run artifacts (steps.csv, lfs.csv, metrics.json)."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .simulator import RunMetrics

STEP_COLUMNS = ["k", "t", "r", "r_m", "p_t", "p_t0", "losses", "rmse", "score", "score_flagged", "status"]


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x) + 0.0)  # no negative zeros in output


def write_steps_csv(metrics: RunMetrics, path) -> None:
    buses = metrics.der_buses
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STEP_COLUMNS + [f"z_{b}" for b in buses])
        for s in metrics.steps:
            row = [s.k, s.t, s.r, s.r_m, s.p_t, s.p_t0, s.losses, s.rmse, s.score_so_far, s.score_flagged]
            w.writerow([_fmt(v) for v in row] + [s.odcp_status.value] + [_fmt(s.z[b - 1]) for b in buses])


def read_steps_csv(path) -> list[dict]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rec: dict = {}
            for key, val in row.items():
                if key == "status":
                    rec[key] = val
                elif key in ("k",):
                    rec[key] = int(val)
                elif key == "score_flagged":
                    rec[key] = val == "1"
                else:
                    rec[key] = float(val)
            out.append(rec)
    return out


def write_lfs_csv(metrics: RunMetrics, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "t", "bus", "lambda_hat", "lambda_true"])
        for s in metrics.steps:
            for i, (est, true) in enumerate(zip(s.lambda_hat, s.lambda_true), start=1):
                w.writerow([s.k, _fmt(s.t), i, _fmt(est), _fmt(true)])


def read_lfs_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(lambda_hat, lambda_true)`` arrays of shape (steps, N)."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.append((int(row["k"]), int(row["bus"]), float(row["lambda_hat"]), float(row["lambda_true"])))
    if not rows:
        return np.zeros((0, 0)), np.zeros((0, 0))
    ks = sorted({r[0] for r in rows})
    n = max(r[1] for r in rows)
    hat = np.zeros((len(ks), n))
    true = np.zeros((len(ks), n))
    pos = {k: i for i, k in enumerate(ks)}
    for k, b, h, t in rows:
        hat[pos[k], b - 1] = h
        true[pos[k], b - 1] = t
    return hat, true


def write_metrics_json(metrics: RunMetrics, path, extra: dict | None = None) -> None:
    d = metrics.summary()
    if extra:
        d.update(extra)
    Path(path).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_metrics_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def format_table(rows: list[dict], fmt: str = "csv") -> str:
    if fmt == "json":
        return json.dumps(rows, indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if rows:
        w.writerow(list(rows[0]))
        for r in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in r.values()])
    return buf.getvalue()


def write_table(rows: list[dict], path, fmt: str = "csv") -> None:
    Path(path).write_text(format_table(rows, fmt), encoding="utf-8")


def read_table(path) -> list[dict]:
    p = Path(path)
    if p.suffix == ".json":
        return json.loads(p.read_text(encoding="utf-8"))
    with open(p, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
