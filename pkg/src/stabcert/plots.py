"""Figure rendering for CLI reports.

Every report-producing command can drop a PNG next to its JSON/CSV
output; these helpers keep the plotting straightforward and headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "save_stability_curve",
    "save_certify_bars",
    "save_degree_profiles",
    "save_bise_curves",
    "save_rankstab_hist",
    "save_smooth_grid",
]


def _finish(fig, path: str) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_stability_curve(path: str, radii, mean_tau, ci_low=None, ci_high=None,
                         exact=None) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(radii, mean_tau, marker="o", label="estimated rate")
    if ci_low is not None and ci_high is not None:
        ax.fill_between(radii, ci_low, ci_high, alpha=0.25, label="95% bootstrap CI")
    if exact is not None:
        ax.plot(radii, exact, marker="x", linestyle="--", label="exact rate")
    ax.set_xlabel("perturbation radius")
    ax.set_ylabel("stability rate")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="best", fontsize=8)
    _finish(fig, path)


def save_certify_bars(path: str, labels, tau_hats, epsilon: float) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    xs = np.arange(len(labels))
    ax.bar(xs, tau_hats, yerr=epsilon, capsize=3)
    ax.set_xticks(xs)
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("estimated stability rate")
    ax.set_ylim(0, 1.05)
    _finish(fig, path)


def save_degree_profiles(path: str, rows) -> None:
    """Rows from the masking-vs-flipping report: per-degree mean |coeff|."""
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.5), sharey=True)
    for ax, op in zip(axes, ("masking", "flipping")):
        for lam in sorted({r["lam"] for r in rows}, reverse=True):
            pts = [(r["degree"], r["mean_abs_coeff"]) for r in rows
                   if r["operator"] == op and r["lam"] == lam]
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts],
                    marker=".", label=f"rate {lam}")
        ax.set_title(op)
        ax.set_xlabel("degree")
    axes[0].set_ylabel("mean |coefficient|")
    axes[0].legend(fontsize=7)
    _finish(fig, path)


def save_bise_curves(path: str, scores) -> None:
    """Insertion/deletion curves with optional confidence bands."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for score in scores:
        ks = list(score.ks)
        ax.plot(ks, score.values, marker="o", label=f"{score.mode} (auc={score.auc:.3f})")
        if score.bounds is not None:
            w = score.bounds.half_width
            lo = [max(0.0, v - w) for v in score.values]
            hi = [min(1.0, v + w) for v in score.values]
            ax.fill_between(ks, lo, hi, alpha=0.2)
    ax.set_xlabel("top-k features")
    ax.set_ylabel("flip probability")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=8)
    _finish(fig, path)


def save_rankstab_hist(path: str, per_trial_pct, mean_pct: float, sd_pct: float) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.hist(per_trial_pct, bins=20, alpha=0.8)
    ax.axvline(mean_pct, color="k", linestyle="--",
               label=f"mean {mean_pct:.2f}% (sd {sd_pct:.2f})")
    ax.set_xlabel("rank displacement (%)")
    ax.set_ylabel("trials")
    ax.legend(fontsize=8)
    _finish(fig, path)


def save_smooth_grid(path: str, lams, series_by_radius) -> None:
    """Mean stability per masking rate, one line per radius."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for r, values in series_by_radius.items():
        ax.plot(lams, values, marker="o", label=f"radius {r}")
    ax.set_xlabel("masking rate")
    ax.set_ylabel("mean estimated stability")
    ax.set_ylim(-0.02, 1.02)
    ax.invert_xaxis()
    ax.legend(fontsize=8)
    _finish(fig, path)
