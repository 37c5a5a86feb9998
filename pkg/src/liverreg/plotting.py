"""Report figures rendered straight to files (Agg backend, no display)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path):
    # Fixed metadata keeps PNG bytes stable across runs.
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_trace(trace, path, title: str = "RTO objective"):
    """Objective terms against step, log scale when all values are positive."""
    arr = np.asarray(trace, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for col, label in zip(range(1, 5), ("L_s", "L_cre", "L_iso", "L_def")):
            ax.plot(arr[:, 0], arr[:, col], label=label, lw=2 if label == "L_def" else 1)
        if np.all(arr[:, 1:] > 0):
            ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.set_title(title)
        ax.legend(frameon=False)
        _save(fig, path)


def plot_overlay(mask, pixels_gt, pixels_rigid, pixels_nonrigid, path, title: str = ""):
    """Target mask with true, rigid and non-rigid landmark projections."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.imshow(np.asarray(mask, dtype=float), cmap="Greys", vmin=0, vmax=2,
                  extent=(0, mask.shape[1], mask.shape[0], 0))
        ax.scatter(*np.asarray(pixels_gt).T, s=8, c="k", marker="o", label="true")
        ax.scatter(*np.asarray(pixels_rigid).T, s=8, c="tab:orange", marker="x", label="rigid")
        if pixels_nonrigid is not None:
            ax.scatter(*np.asarray(pixels_nonrigid).T, s=8, c="tab:blue", marker="+", label="non-rigid")
        ax.set_xlim(0, mask.shape[1])
        ax.set_ylim(mask.shape[0], 0)
        ax.set_aspect("equal")
        ax.legend(frameon=False, loc="lower right", fontsize=7)
        if title:
            ax.set_title(title)
        _save(fig, path)


def plot_metrics(reports, path):
    """Per-seed TRE_a and Dice, rigid next to non-rigid."""
    seeds = [r.seed for r in reports]
    x = np.arange(len(seeds))
    w = 0.38
    with plt.rc_context(STYLE):
        fig, (a0, a1) = plt.subplots(1, 2, figsize=(8, 3))
        a0.bar(x - w / 2, [r.tre_a_rigid for r in reports], w, label="rigid")
        a0.bar(x + w / 2, [r.tre_a_nonrigid for r in reports], w, label="non-rigid")
        a0.set_ylabel("TRE_a [px]")
        a1.bar(x - w / 2, [100 * r.dice_rigid for r in reports], w, label="rigid")
        a1.bar(x + w / 2, [100 * r.dice_nonrigid for r in reports], w, label="non-rigid")
        a1.set_ylabel("Dice [%]")
        lo = min([100 * r.dice_rigid for r in reports] + [100 * r.dice_nonrigid for r in reports])
        a1.set_ylim(max(0.0, lo - 2), 100)
        for ax in (a0, a1):
            ax.set_xticks(x, [str(s) for s in seeds])
            ax.set_xlabel("seed")
        a0.legend(frameon=False)
        _save(fig, path)
