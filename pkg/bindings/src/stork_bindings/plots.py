"""Render the solver CLI's delimited reports into figure files.

Purely presentational: everything plotted comes from the CSV (data rows plus
the ``# key=value`` header metadata); nothing is recomputed.  Parsing happens
in full before any figure file is touched, so a malformed or empty report
never leaves a partial image behind.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

PLOT_KINDS = ("stability", "convergence", "stiffness", "sweep")


class PlotError(ValueError):
    """Raised for unusable report files (malformed rows, empty tables)."""


@dataclass(frozen=True)
class _Report:
    meta: dict
    columns: list
    rows: list  # list of row lists, raw strings


def _parse_csv(path: str) -> _Report:
    meta, columns, rows = {}, None, []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line.lstrip("# ").partition("=")
                meta[key] = value
                continue
            cells = line.split(",")
            if columns is None:
                columns = cells
            else:
                if len(cells) != len(columns):
                    raise PlotError(
                        f"{path}: row {lineno}: expected {len(columns)} "
                        f"fields, got {len(cells)}"
                    )
                rows.append((lineno, cells))
    if columns is None or not rows:
        raise PlotError(f"{path}: no data rows")
    return _Report(meta=meta, columns=columns, rows=rows)


def _column(report: _Report, name: str, path: str) -> np.ndarray:
    try:
        idx = report.columns.index(name)
    except ValueError:
        raise PlotError(
            f"{path}: missing column {name!r} (have {report.columns})"
        ) from None
    out = np.empty(len(report.rows))
    for k, (lineno, cells) in enumerate(report.rows):
        try:
            out[k] = float(cells[idx])
        except ValueError:
            raise PlotError(
                f"{path}: row {lineno}: {name}={cells[idx]!r} is not a number"
            ) from None
    return out


def _text_column(report: _Report, name: str, path: str) -> list:
    try:
        idx = report.columns.index(name)
    except ValueError:
        raise PlotError(
            f"{path}: missing column {name!r} (have {report.columns})"
        ) from None
    return [cells[idx] for _, cells in report.rows]


def _meta_label(report: _Report) -> str:
    try:
        cfg = json.loads(report.meta.get("config", ""))
    except ValueError:
        return ""
    bits = [str(cfg[k]) for k in ("method", "substeps") if k in cfg and cfg[k]]
    return " s=".join(bits) if len(bits) == 2 else " ".join(bits)


def _draw_stability(report: _Report, path: str, ax):
    re = _column(report, "re", path)
    im = _column(report, "im", path)
    mag = _column(report, "magnitude", path)
    re_vals, re_idx = np.unique(re, return_inverse=True)
    im_vals, im_idx = np.unique(im, return_inverse=True)
    grid = np.full((im_vals.size, re_vals.size), np.nan)
    grid[im_idx, re_idx] = mag
    ax.contourf(re_vals, im_vals, grid, levels=[0.0, 1.0],
                colors=["#9ecae1"], alpha=0.8)
    ax.contour(re_vals, im_vals, grid, levels=[1.0],
               colors="#08519c", linewidths=1.2)
    ax.axhline(0.0, color="0.6", lw=0.6)
    ax.axvline(0.0, color="0.6", lw=0.6)
    extent = report.meta.get("real_stability_extent")
    title = f"stability region ({_meta_label(report)})".strip()
    if extent:
        title += f", real extent {float(extent):.2f}"
    ax.set(xlabel="Re z", ylabel="Im z", title=title)


def _draw_convergence(report: _Report, path: str, ax):
    h = _column(report, "h", path)
    err = _column(report, "error", path)
    order = np.argsort(h)
    ax.loglog(h[order], err[order], "o-", label="measured")
    fitted = report.meta.get("fitted_order")
    if fitted:
        p = float(fitted)
        ref = err[order][-1] * (h[order] / h[order][-1]) ** p
        ax.loglog(h[order], ref, "--", color="0.5",
                  label=f"slope {p:.2f}")
    ax.set(xlabel="step size h", ylabel="endpoint error",
           title=f"convergence ({_meta_label(report)})".strip())
    ax.legend()


def _draw_stiffness(report: _Report, path: str, ax):
    t = _column(report, "t", path)
    for name in report.columns[1:]:
        vals = _column(report, name, path)
        style = {"exact": dict(color="k", lw=2.0)}.get(name, dict(lw=1.2))
        ax.plot(t, vals, label=name, **style)
    ax.set(xlabel="t", ylabel="x(t)", title="stiff linear decay")
    ax.legend()


def _draw_sweep(report: _Report, path: str, ax):
    methods = _text_column(report, "method", path)
    status = _text_column(report, "status", path)
    nfe = _column(report, "nfe", path)
    err = _column(report, "error", path)
    seen = list(dict.fromkeys(methods))
    for method in seen:
        mask = np.array([m == method and s == "ok"
                         for m, s in zip(methods, status)])
        if not mask.any():
            continue
        order = np.argsort(nfe[mask])
        ax.loglog(nfe[mask][order], np.maximum(err[mask][order], 1e-300),
                  "o-", label=method)
    ax.set(xlabel="function evaluations", ylabel="endpoint error",
           title="error vs. evaluation budget")
    ax.legend()


_DRAWERS = {
    "stability": _draw_stability,
    "convergence": _draw_convergence,
    "stiffness": _draw_stiffness,
    "sweep": _draw_sweep,
}


def plot_report(csv_path, kind: str, out_path=None) -> str:
    """Render one CLI CSV report to an image file and return its path.

    ``kind`` selects the layout (one of ``PLOT_KINDS``); ``out_path``
    defaults to the CSV path with a ``.png`` suffix.  Raises
    :class:`PlotError` (naming the offending row) before any file is
    written if the CSV is malformed or empty.
    """
    csv_path = os.fspath(csv_path)
    if kind not in _DRAWERS:
        raise PlotError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
    report = _parse_csv(csv_path)
    out = os.fspath(out_path) if out_path else os.path.splitext(csv_path)[0] + ".png"
    fig, ax = plt.subplots(figsize=(5.5, 4.0), constrained_layout=True)
    try:
        _DRAWERS[kind](report, csv_path, ax)
        fig.savefig(out, dpi=150)
    finally:
        plt.close(fig)
    return out
