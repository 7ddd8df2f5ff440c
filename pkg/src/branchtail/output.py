"""CSV, JSON and SVG writers for samples, traces, moments, tails and measures."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np


def fmt(x):
    """Round-trip-exact decimal (17 significant digits)."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return f"{float(x):.17g}"


def write_csv(path, header, rows, comments=()):
    path = Path(path)
    with path.open("w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])
    return path


def read_csv(path):
    """Rows of a CSV written by :func:`write_csv`, comments skipped."""
    with Path(path).open(newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_json(path, obj):
    path = Path(path)
    path.write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")
    return path


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


# -- samples and traces -------------------------------------------------------

def write_samples(path, values):
    return write_csv(path, ["index", "value"], enumerate(np.asarray(values, dtype=float)))


def read_samples(path):
    rows = read_csv(path)
    if not rows or "value" not in rows[0]:
        raise ValueError(f"{path}: expected a sample CSV with header index,value")
    return np.array([float(r["value"]) for r in rows])


def write_trace(path, trace):
    return write_csv(path, ["generation", "z", "w", "abs_pi_sum", "max_abs_pi"], trace.rows())


# -- moments ------------------------------------------------------------------

def write_moments(path, report):
    return write_csv(path, ["beta", "rho", "ci_lo", "ci_hi", "exact_flag"], report.rows())


def write_alpha(path, result):
    return write_json(path, result.to_dict())


# -- tails --------------------------------------------------------------------

TAIL_HEADER = ["t", "emp_ccdf_right", "ci_lo_r", "ci_hi_r", "emp_ccdf_left", "ci_lo_l", "ci_hi_l",
               "model_right", "model_left", "ratio_right", "ratio_left", "flag"]


def write_tail(path, rows):
    return write_csv(path, TAIL_HEADER, (r.csv_row() for r in rows))


def write_hill(path, curve):
    return write_csv(path, ["k", "alpha_right", "alpha_left"], curve.rows())


def write_goldie(path, table):
    return write_csv(path, ["t", "g_plus", "g_minus", "cum_plus", "cum_minus", "cum_abs_plus", "cum_abs_minus"],
                     table.rows())


# -- measures and pmfs --------------------------------------------------------

def write_measure(path, plus, minus):
    """Two grids on a common index range as ``support,mass_pp,mass_pm``."""
    grids = [g for g in (plus, minus) if not g.is_zero()]
    rows = []
    if grids:
        lo = min(g.start for g in grids)
        hi = max(g.start + len(g.masses) for g in grids)
        cols = []
        for g in (plus, minus):
            col = np.zeros(hi - lo)
            if not g.is_zero():
                col[g.start - lo: g.start - lo + len(g.masses)] = g.masses
            cols.append(col)
        support = grids[0].offset + (lo + np.arange(hi - lo)) * grids[0].span
        rows = zip(support, *cols)
    comments = [f"kind={plus.kind}", f"span={fmt(plus.span)}, offset={fmt(plus.offset)}"]
    return write_csv(path, ["support", "mass_pp", "mass_pm"], rows, comments)


def write_pmf(path, pmf):
    return write_csv(path, ["value", "probability"], pmf.atoms())


# -- SVG ----------------------------------------------------------------------

def write_ccdf_svg(path, rows, alpha, width=640, height=480):
    """Log-log chart of the empirical CCDFs against the model lines."""
    pts = [(r.t, r.right, r.left, r.model_right, r.model_left) for r in rows]
    xs = [p[0] for p in pts]
    ys = [v for p in pts for v in p[1:] if v > 0]
    if not xs or not ys:
        raise ValueError("nothing to plot")
    lx0, lx1 = math.log10(min(xs)), math.log10(max(xs))
    ly0, ly1 = math.log10(min(ys)), math.log10(max(ys))
    lx1 = lx1 if lx1 > lx0 else lx0 + 1
    ly1 = ly1 if ly1 > ly0 else ly0 + 1
    m = 50

    def xy(x, y):
        px = m + (math.log10(x) - lx0) / (lx1 - lx0) * (width - 2 * m)
        py = height - m - (math.log10(y) - ly0) / (ly1 - ly0) * (height - 2 * m)
        return f"{px:.2f},{py:.2f}"

    def line(col, colour, dash=""):
        seg = [xy(p[0], p[col]) for p in pts if p[col] > 0]
        if len(seg) < 2:
            return ""
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        return f'<polyline fill="none" stroke="{colour}" stroke-width="1.5"{extra} points="{" ".join(seg)}"/>'

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect x="{m}" y="{m}" width="{width - 2 * m}" height="{height - 2 * m}" fill="none" stroke="#888"/>',
        line(1, "#1f77b4"), line(2, "#d62728"), line(3, "#1f77b4", "6,4"), line(4, "#d62728", "6,4"),
        f'<text x="{m}" y="{m - 10}" font-size="12">P(R &gt; t) (blue), P(R &lt; -t) (red), '
        f'model H t^-{alpha:g} (dashed)</text>',
        f'<text x="{m}" y="{height - 15}" font-size="11">t from {min(xs):.3g} to {max(xs):.3g} (log scale)</text>',
        "</svg>",
    ]
    Path(path).write_text("\n".join(p for p in parts if p) + "\n")
    return Path(path)
