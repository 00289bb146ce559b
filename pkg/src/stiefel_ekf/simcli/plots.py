"""SVG panels of ``P^K_m`` and the median normalized dist^2 per step.

One file per prior variance; one color per noise variance. The y axis is
logarithmic. Output bytes depend only on the summary and the matplotlib
version (fixed hash salt, no timestamp).
"""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .experiment import read_summary  # noqa: E402

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


class EmptySummaryError(ValueError):
    """The summary has no rows to plot."""


def _panels(cols):
    panels = {}
    for i, s in enumerate(cols["sigma0_2"]):
        panels.setdefault(s, {}).setdefault(cols["xi2"][i], []).append(i)
    return panels


def emit_plots(summary_path, out_dir, title=None):
    """Write one SVG per prior variance and return the paths."""
    cols = read_summary(summary_path)
    if not cols or not cols.get("step"):
        raise EmptySummaryError(f"summary {summary_path} has no rows")
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    rc = {"svg.hashsalt": "stiefel-ekf", "svg.fonttype": "none", "font.size": 9}
    with matplotlib.rc_context(rc):
        for sigma0_2, curves in _panels(cols).items():
            fig, ax = plt.subplots(figsize=(5.0, 3.6))
            for c, (xi2, rows) in enumerate(curves.items()):
                color = COLORS[c % len(COLORS)]
                step = [cols["step"][i] for i in rows]
                pk = [cols["PK"][i] for i in rows]
                med = [cols["dist2_median"][i] for i in rows]
                ax.plot(step, pk, color=color, linestyle="--", linewidth=1.2,
                        label=f"P^K, xi^2 = {xi2:g}")
                ax.plot(step, med, color=color, linestyle="-", linewidth=1.0,
                        label=f"median dist^2/dim, xi^2 = {xi2:g}")
            ax.set_yscale("log")
            ax.set_xlabel("measurement m")
            ax.set_ylabel("scalar variance")
            head = f"{title}: " if title else ""
            ax.set_title(f"{head}sigma0^2 = {sigma0_2:g}")
            ax.legend(loc="upper right", fontsize=7)
            fig.tight_layout()
            path = os.path.join(out_dir, f"panel_sigma0_2={sigma0_2!r}.svg")
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            paths.append(path)
    return paths
