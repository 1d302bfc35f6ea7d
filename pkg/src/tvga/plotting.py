"""Figures for the ``report`` command, written next to their TSV data."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def _figure(width=3.4, height=2.4):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(width, height))
    return fig, ax


def plot_balance(ps, fractions, path, solved=None, random_fraction=None, title=None):
    """Share of existing edges among sampled pair slots as a function of p."""
    with plt.rc_context(STYLE):
        fig, ax = _figure()
        ax.plot(ps, fractions, "o-", color="0.3", ms=3, lw=1, label="triad sampling")
        if solved is not None:
            ax.plot([solved[0]], [solved[1]], "o", color="tab:red", ms=6, label=f"balanced p={solved[0]:.3f}")
        if random_fraction is not None:
            ax.plot([0.0], [random_fraction], "o", color="gold", mec="0.3", ms=6, label="uniform triads")
        ax.axhline(0.5, color="0.6", lw=0.8, ls="--")
        ax.set_xlabel("sampling probability p")
        ax.set_ylabel("fraction of existing edges")
        ax.set_xlim(-0.03, 1.0)
        ax.set_ylim(0.0, 1.0)
        if title:
            ax.set_title(title)
        ax.legend(frameon=False, loc="upper left")
        fig.savefig(path)
        plt.close(fig)


def plot_degree_distributions(degree_sets, path):
    """Complementary CDF of node degree on log-log axes, one line per graph."""
    with plt.rc_context(STYLE):
        fig, ax = _figure()
        for name, deg in degree_sets.items():
            d = np.sort(np.asarray(deg))
            ccdf = 1.0 - np.arange(len(d)) / len(d)
            ax.loglog(d, ccdf, drawstyle="steps-post", lw=1, label=name)
        ax.set_xlabel("degree")
        ax.set_ylabel("P(D >= d)")
        ax.legend(frameon=False)
        fig.savefig(path)
        plt.close(fig)


def plot_training_curve(evaluations, path):
    with plt.rc_context(STYLE):
        fig, ax = _figure()
        it = [e["iter"] for e in evaluations]
        ax.plot(it, [e["val_auc"] for e in evaluations], lw=1, label="val AUC")
        ax.plot(it, [e["val_ap"] for e in evaluations], lw=1, label="val AP")
        ax.set_xlabel("iteration")
        ax.set_ylabel("score")
        ax.legend(frameon=False)
        fig.savefig(path)
        plt.close(fig)
