"""Figure rendering for sweep metrics and edge-count curves.

Kept separate from the numerical modules: these are presentation helpers
used by the command-line entry points, writing PNG files next to the CSV
tables they visualize.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def render_sweep_panels(rows, path) -> None:
    """Four-panel summary of a simulation sweep, one curve per VAR strength.

    Panels: mean detected edges, mean recall, mean FDP, mean precision,
    each against the estimated factor count.
    """
    panels = [
        ("mean_edges", "(a) detected edges"),
        ("mean_recall", "(b) recall"),
        ("mean_fdp", "(c) FDP"),
        ("mean_precision", "(d) precision"),
    ]
    alphas = sorted({row.alpha_V for row in rows})
    fig, axes = plt.subplots(2, 2, figsize=(9, 7), sharex=True)
    for ax, (attr, title) in zip(axes.ravel(), panels):
        for alpha in alphas:
            cells = sorted(
                (row for row in rows if row.alpha_V == alpha), key=lambda r: r.r
            )
            ax.plot(
                [c.r for c in cells],
                [getattr(c, attr) for c in cells],
                marker="o",
                label=f"strength {alpha:g}",
            )
        ax.set_title(title)
        ax.set_xlabel("estimated factors r")
        ax.grid(alpha=0.3)
    axes[0, 0].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_edge_counts(counts_frame, path) -> None:
    """Selected-edge count as a function of the estimated factor count."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(counts_frame["r"], counts_frame["n_edges"], marker="o")
    ax.set_xlabel("estimated factors r")
    ax.set_ylabel("selected edges")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
