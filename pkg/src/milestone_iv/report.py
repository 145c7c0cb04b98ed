"""Rendering: key-value machine reports, 6-significant-digit human
tables, and matplotlib figures written next to the delimited outputs."""

from __future__ import annotations

import csv
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def sig6(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    return f"{float(x):.6g}"


def write_keyvalue(path, items) -> None:
    """Machine report: full-precision key = value lines."""
    with open(path, "w") as fh:
        for k, v in items:
            fh.write(f"{k} = {v!r}\n" if not isinstance(v, str)
                     else f"{k} = {v}\n")


def write_table(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def human_table(header: Sequence[str], rows) -> str:
    cells = [[sig6(c) if isinstance(c, (int, float, np.floating,
                                        np.integer)) else str(c)
              for c in row] for row in rows]
    widths = [max(len(h), *(len(r[j]) for r in cells)) if cells else len(h)
              for j, h in enumerate(header)]
    out = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    out.append("  ".join("-" * w for w in widths))
    for r in cells:
        out.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(out) + "\n"


def balance_figure(path, names, before, within) -> None:
    """Dot plot of covariate mean differences before matching vs within
    matched sets."""
    fig, ax = plt.subplots(figsize=(6, max(2, 0.4 * len(names) + 1)))
    y = np.arange(len(names))
    ax.scatter(before, y, marker="o", label="before matching")
    ax.scatter(within, y, marker="x", label="within matched sets")
    ax.axvline(0.0, color="grey", lw=0.8)
    ax.set_yticks(y)
    ax.set_yticklabels(names)
    ax.set_xlabel("treated - control mean difference")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def confidence_set_figure(path, accepted, projections, estimate=None):
    """Scatter of accepted slope vectors (P=2) or an interval plot (P=1)."""
    fig, ax = plt.subplots(figsize=(5, 4))
    acc = np.asarray(accepted)
    if acc.shape[1] >= 2:
        ax.scatter(acc[:, 0], acc[:, 1], s=4, alpha=0.5)
        if estimate is not None:
            ax.plot(estimate[0], estimate[1], "r+", ms=12)
        ax.set_xlabel("slope, dose 1")
        ax.set_ylabel("slope, dose 2")
    else:
        lo, hi = projections[0]
        ax.hlines(0, lo, hi, lw=4)
        if estimate is not None:
            ax.plot(estimate[0], 0, "r+", ms=12)
        ax.set_xlabel("slope")
        ax.set_yticks([])
    ax.set_title("confidence set (grid inversion)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def estimates_figure(path, labels, estimates, intervals) -> None:
    """Point estimates with interval whiskers, one row per method."""
    fig, ax = plt.subplots(figsize=(6, 0.5 * len(labels) + 1.5))
    y = np.arange(len(labels))
    for i, (est, (lo, hi)) in enumerate(zip(estimates, intervals)):
        if np.isfinite(lo) and np.isfinite(hi):
            ax.hlines(i, lo, hi, lw=2, color="C0")
        ax.plot(est, i, "o", color="C1")
    ax.set_yticks(y)
    ax.set_yticklabels(labels)
    ax.set_xlabel("slope estimate")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
