"""Trajectory CSV files, provenance headers and quick-look SVG plots.

CSV layout
----------
Lines starting with ``#`` come first: ``# git: <describe>``, then the
resolved configuration, one TOML line per ``# config: `` line, then free-form
``# key: value`` notes. The header row is exactly
``t,I_L,I_R,n_up,n_dn,S12,SvN,Ehyb,trace,ds2``. Numbers are written with
``%.17g`` (round-trip exact); observables that do not apply are empty
fields. The time column is strictly increasing.
"""

from __future__ import annotations

import csv
import functools
import math
import subprocess
from pathlib import Path

import numpy as np

from .observables import CSV_COLUMNS


@functools.lru_cache(maxsize=1)
def git_describe():
    """``git describe --always --dirty`` of the source tree, or ``"unknown"``."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def _fmt(v):
    if v is None:
        return ""
    v = float(v)
    return "" if math.isnan(v) else "%.17g" % v


def provenance_lines(config_toml=None, notes=None):
    lines = [f"# git: {git_describe()}"]
    if config_toml:
        lines += [f"# config: {ln}" for ln in config_toml.rstrip("\n").splitlines()]
    for k, v in (notes or {}).items():
        lines.append(f"# {k}: {v}")
    return lines


def write_trajectory_csv(path, records, config_toml=None, notes=None):
    """Write observable records (objects with ``row()``) to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for ln in provenance_lines(config_toml, notes):
            fh.write(ln + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rec in records:
            w.writerow([_fmt(v) for v in rec.row()])
    return path


class CsvSchemaError(ValueError):
    """A trajectory CSV does not follow the documented layout."""


def read_trajectory_csv(path):
    """Parse a trajectory CSV into ``(columns, comments)``.

    ``columns`` maps each header name to a float array with NaN for empty
    fields. Raises :class:`CsvSchemaError` on a wrong header, a ragged row or
    a non-increasing time column.
    """
    comments, rows, header = [], [], None
    with open(path, newline="") as fh:
        for line in fh:
            if header is None and line.startswith("#"):
                comments.append(line[1:].strip())
                continue
            if header is None:
                header = next(csv.reader([line]))
                if tuple(header) != CSV_COLUMNS:
                    raise CsvSchemaError(f"{path}: unexpected header {header}")
                continue
            if line.strip():
                rows.append(next(csv.reader([line])))
    if header is None:
        raise CsvSchemaError(f"{path}: missing header")
    data = np.full((len(rows), len(CSV_COLUMNS)), np.nan)
    for i, row in enumerate(rows):
        if len(row) != len(CSV_COLUMNS):
            raise CsvSchemaError(f"{path}: row {i + 1} has {len(row)} fields")
        for j, cell in enumerate(row):
            if cell != "":
                try:
                    data[i, j] = float(cell)
                except ValueError as exc:
                    raise CsvSchemaError(f"{path}: row {i + 1}: {exc}") from exc
    t = data[:, 0]
    if np.any(np.isnan(t)) or np.any(np.diff(t) <= 0):
        raise CsvSchemaError(f"{path}: time column must be present and strictly increasing")
    return {name: data[:, j] for j, name in enumerate(CSV_COLUMNS)}, comments


def write_svg(path, series, title="", xlabel="t", width=640, height=400):
    """Line plot of ``{label: (t, y)}`` as a standalone SVG file."""
    path = Path(path)
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"]
    pts = [(np.asarray(t, float), np.asarray(y, float)) for t, y in series.values()]
    finite = [(t[np.isfinite(y)], y[np.isfinite(y)]) for t, y in pts]
    xs = np.concatenate([t for t, _ in finite]) if finite else np.array([0.0, 1.0])
    ys = np.concatenate([y for _, y in finite]) if finite else np.array([0.0, 1.0])
    if xs.size == 0:
        xs, ys = np.array([0.0, 1.0]), np.array([0.0, 1.0])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    x1 = x1 if x1 > x0 else x0 + 1.0
    pad = 0.05 * (y1 - y0) if y1 > y0 else 0.5
    y0, y1 = y0 - pad, y1 + pad
    ml, mr, mt, mb = 60, 20, 30, 40
    sx = lambda x: ml + (x - x0) / (x1 - x0) * (width - ml - mr)  # noqa: E731
    sy = lambda y: height - mb - (y - y0) / (y1 - y0) * (height - mt - mb)  # noqa: E731
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="14">{title}</text>',
           f'<line x1="{ml}" y1="{height - mb}" x2="{width - mr}" y2="{height - mb}" stroke="black"/>',
           f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{height - mb}" stroke="black"/>',
           f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle" font-size="12">{xlabel}</text>']
    for v in np.linspace(y0, y1, 5):
        out.append(f'<text x="{ml - 4}" y="{sy(v) + 4:.1f}" text-anchor="end" font-size="10">{v:.3g}</text>')
    for v in np.linspace(x0, x1, 5):
        out.append(f'<text x="{sx(v):.1f}" y="{height - mb + 14}" text-anchor="middle" font-size="10">{v:.3g}</text>')
    for k, ((label, _), (t, y)) in enumerate(zip(series.items(), finite)):
        c = colors[k % len(colors)]
        if len(t):
            d = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(t, y))
            out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{d}"/>')
        out.append(f'<text x="{width - mr - 4}" y="{mt + 14 * (k + 1)}" text-anchor="end" '
                   f'font-size="11" fill="{c}">{label}</text>')
    out.append("</svg>")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(out) + "\n")
    return path
