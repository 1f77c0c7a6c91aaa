"""Matplotlib figures for run reports.

Everything renders through the Agg backend into files; nothing is shown
interactively. PNG metadata is pinned so reruns produce identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.2,
    "svg.hashsalt": "idmk",
}

REF_COLOR = "#c0392b"
AGENT_COLOR = "#2c6fbb"


def _figure(width=5.0, height=None):
    golden = (5 ** 0.5 - 1) / 2
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(width, height or width * golden))
    return fig, ax


def save_figure(fig, path) -> None:
    with plt.rc_context(STYLE):
        fig.savefig(path, metadata={"Software": None}, bbox_inches="tight")
    plt.close(fig)


def plot_coverage_curves(curves: dict, title: str = "", path=None):
    """``curves`` maps a label to ``(radii, coverage)``; radii are normalised by R on the x axis."""
    fig, ax = _figure()
    with plt.rc_context(STYLE):
        for label, (radii, cov) in curves.items():
            R = radii[-1] if len(radii) and radii[-1] > 0 else 1.0
            ax.step([r / R for r in radii], cov, where="post", alpha=0.7, label=label)
        ax.set_xlabel("r / R")
        ax.set_ylabel("coverage rate")
        ax.set_ylim(-0.02, 1.02)
        ax.set_title(title)
        if 1 < len(curves) <= 12:
            ax.legend(loc="lower right", frameon=False)
    if path is not None:
        save_figure(fig, path)
    return fig


def plot_rollouts(ref_xy, agents_xy: dict, title: str = "", path=None):
    """Reference path in red with every rollout overlaid in blue."""
    fig, ax = _figure(4.5, 4.5)
    with plt.rc_context(STYLE):
        for xy in agents_xy.values():
            ax.plot([p[0] for p in xy], [p[1] for p in xy], color=AGENT_COLOR, alpha=0.35)
        ax.plot([p[0] for p in ref_xy], [p[1] for p in ref_xy], color=REF_COLOR, lw=2.0, label="reference")
        ax.plot([ref_xy[0][0]], [ref_xy[0][1]], "ko", ms=3)
        ax.set_aspect("equal", adjustable="datalim")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.set_title(title)
    if path is not None:
        save_figure(fig, path)
    return fig


def plot_training_curves(epochs, series: dict, title: str = "", path=None):
    """One line per loss component against epoch."""
    fig, ax = _figure()
    with plt.rc_context(STYLE):
        for label, ys in series.items():
            ax.plot(epochs, ys, label=label)
        ax.set_xlabel("epoch")
        ax.set_yscale("log")
        ax.set_title(title)
        ax.legend(frameon=False)
    if path is not None:
        save_figure(fig, path)
    return fig


def plot_grouped_bars(groups: list[str], series: dict, ylabel: str = "median AUC", title: str = "", path=None):
    """Grouped bar chart: one group per trajectory, one bar per series."""
    fig, ax = _figure(6.5, 3.0)
    n = max(len(series), 1)
    width = 0.8 / n
    with plt.rc_context(STYLE):
        for k, (label, vals) in enumerate(series.items()):
            xs = [i + (k - (n - 1) / 2) * width for i in range(len(groups))]
            ax.bar(xs, vals, width=width, label=label)
        ax.set_xticks(range(len(groups)))
        ax.set_xticklabels(groups, rotation=30, ha="right")
        ax.set_ylim(0, 1.05)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.legend(frameon=False, ncol=min(n, 4))
    if path is not None:
        save_figure(fig, path)
    return fig
