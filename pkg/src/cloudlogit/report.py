"""Cross-run comparison tables and plot-ready CSV files.

Reads ``metrics.csv`` and ``config.ini`` from each run directory; never
writes into them.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .errors import DataError
from .losses import logit_curve
from .pipeline import atomic_write_csv, atomic_write_text

COLUMNS = ("run", "loss", "sampler", "stage2_iters", "seed", "overall", "head", "middle", "tail")


def read_run(run_dir) -> dict:
    run_dir = Path(run_dir)
    path = run_dir / "metrics.csv"
    if not path.is_file():
        raise DataError(f"{run_dir}: no metrics.csv (not a run directory?)")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != 1:
        raise DataError(f"{path}: expected one summary row, got {len(rows)}")
    row = rows[0]
    out = {"run": run_dir.name}
    for key in COLUMNS[1:]:
        value = row.get(key, "")
        out[key] = float(value) if key in ("overall", "head", "middle", "tail") else value
    return out


def compare_runs(run_dirs) -> list:
    return [read_run(d) for d in run_dirs]


def format_comparison(rows) -> str:
    """Fixed-width table, one row per run plus a mean row per loss family."""
    header = f"{'run':<24}{'loss':<18}{'sampler':<10}{'overall':>9}{'head':>9}{'middle':>9}{'tail':>9}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r['run']:<24}{r['loss']:<18}{r['sampler'] if r['stage2_iters'] not in ('', '0') else '-':<10}"
                     + "".join(f"{100 * r[k]:>9.2f}" for k in ("overall", "head", "middle", "tail")))
    families = sorted({r["loss"] for r in rows})
    if len(rows) > len(families):
        lines.append("-" * len(header))
        for fam in families:
            sel = [r for r in rows if r["loss"] == fam]
            means = [100 * float(np.nanmean([r[k] for r in sel])) for k in ("overall", "head", "middle", "tail")]
            lines.append(f"{'mean(' + str(len(sel)) + ')':<24}{fam:<18}{'':<10}"
                         + "".join(f"{m:>9.2f}" for m in means))
    return "\n".join(lines) + "\n"


def logit_curve_rows(deltas=(0.1, 0.5), eps_norm=1.0, points=200):
    """GCL-E and GCL-A logits against angle for a few cloud sizes (s = 1)."""
    theta = np.linspace(0.0, math.pi / 2, points)
    rows = []
    for delta in deltas:
        e = logit_curve(theta, delta, eps_norm, "gcl-e")
        a = logit_curve(theta, delta, eps_norm, "gcl-a")
        for t, ze, za in zip(theta, e, a):
            rows.append({"delta": delta, "theta": float(t), "gcl_e": float(ze), "gcl_a": float(za)})
    return rows


def write_report(run_dirs, out_dir) -> Path:
    out_dir = Path(out_dir)
    resolved = {Path(d).resolve() for d in run_dirs}
    if out_dir.resolve() in resolved:
        raise DataError("report output directory must differ from the input runs")
    rows = compare_runs(run_dirs)
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_csv(out_dir / "comparison.csv", list(COLUMNS), rows)
    atomic_write_text(out_dir / "comparison.txt", format_comparison(rows))
    curves = logit_curve_rows()
    atomic_write_csv(out_dir / "logit_curves.csv", list(curves[0]), curves)
    return out_dir
