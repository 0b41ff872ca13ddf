"""Output files: JSON report, CSV summaries, moment-curve CSVs, gnuplot data, check ledger.

All writers are deterministic: keys are sorted, floats are written with
``repr`` precision, and nothing depends on the clock or the output path.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from ..bounds import BOUND_NAMES
from ..diagnostics import format_table
from ..simulate import MomentCurve, curve_to_csv

SUMMARY_COLUMNS = (["scenario", "lambda", "deficit", "budget", "route", "dX", "dY", "dConv"]
                   + [f"{n}_{c}" for n in BOUND_NAMES for c in ("rhs", "passed")])


def clean(obj):
    """Plain JSON types; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return obj


def dumps(doc) -> str:
    return json.dumps(clean(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(doc, path: Path) -> None:
    Path(path).write_text(dumps(doc))


def _fmt(v) -> str:
    v = clean(v)
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def summary_rows(report: dict) -> list[list[str]]:
    rows = []
    for rep in report["deficits"]:
        by_name = {b["name"]: b for b in rep["bounds"]}
        row = [report["scenario"], rep["lambda"], rep["deficit"], rep["budget"], rep["route"],
               rep["dX"]["value"], rep["dY"]["value"], rep["dConv"]["value"]]
        for n in BOUND_NAMES:
            b = by_name.get(n)
            if b is None or not b["applicable"]:
                row += [None, None]
            else:
                row += [b["rhs"], b["passed"]]
        rows.append([_fmt(v) for v in row])
    return rows


def write_summary_csv(reports, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for rep in reports:
            w.writerows(summary_rows(rep))


def write_curve_dat(curve: MomentCurve, path: Path) -> None:
    """Whitespace-separated columns for gnuplot."""
    d = curve.dim
    tr = np.trace(curve.e_gamma, axis1=1, axis2=2) / d
    trvar = np.trace(curve.var_gamma, axis1=1, axis2=2)
    lines = ["# t  TrEGamma/d  TrVarGamma  Evnorm2  stderr_Evnorm2"]
    for k in range(curve.t.size):
        vals = (curve.t[k], tr[k], trvar[k], curve.e_vnorm2[k], curve.se_vnorm2[k])
        lines.append(" ".join(repr(float(v)) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def write_deficit_dat(report: dict, path: Path) -> None:
    """Deficit and every bound against lambda; inapplicable bounds are NaN."""
    lines = ["# lambda  deficit  budget  " + "  ".join(BOUND_NAMES)]
    for rep in report["deficits"]:
        by_name = {b["name"]: b for b in rep["bounds"]}
        vals = [rep["lambda"], rep["deficit"], rep["budget"]]
        for n in BOUND_NAMES:
            b = by_name.get(n)
            vals.append(b["rhs"] if b is not None and b["applicable"] else float("nan"))
        lines.append(" ".join(repr(float(v)) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def write_checks(checks, out: Path) -> None:
    """``checks.json`` (array) and ``checks.txt`` (table) for ``[(subject, CheckResult)]``."""
    rows = [dict(subject=s, **r.to_dict()) for s, r in checks]
    write_json(rows, out / "checks.json")
    parts = []
    for subject in ("X", "Y", "pair"):
        sub = [r for s, r in checks if s == subject]
        if sub:
            parts.append(f"[{subject}]\n" + format_table(sub))
    (out / "checks.txt").write_text("\n\n".join(parts) + "\n")


def write_curves(ws, out: Path) -> None:
    for label in sorted(ws.curves):
        curve = ws.curves[label]
        curve_to_csv(curve, out / f"curve_{label}.csv")
        write_curve_dat(curve, out / f"curve_{label}.dat")


def write_run(result, out: Path) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(result.report, out / "report.json")
    write_summary_csv([result.report], out / "summary.csv")
    write_deficit_dat(result.report, out / "deficit.dat")
    write_curves(result.workspace, out)
    write_checks(result.checks, out)
