"""Report figures rendered to files next to the delimited outputs.

Every renderer takes in-memory data plus an output path and writes one PNG;
nothing here affects training or evaluation results, and every command that
calls into this module can switch it off.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 130


def plot_history(histories: dict, path) -> None:
    """Training-loss curves, log scale; one labeled line per run."""
    fig, ax = plt.subplots(figsize=(6.0, 3.8))
    for label, rows in histories.items():
        its = [r.iteration for r in rows]
        ax.semilogy(its, [max(r.loss_total, 1e-300) for r in rows], label=label, lw=1.0)
    phase_switch = None
    for rows in histories.values():
        lb = [r.iteration for r in rows if r.phase == "lbfgs"]
        if lb:
            phase_switch = min(lb) if phase_switch is None else min(phase_switch, min(lb))
    if phase_switch is not None:
        ax.axvline(phase_switch, color="gray", ls=":", lw=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("total loss")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def plot_pseudo_counts(histories: dict, path) -> None:
    """Pseudo-point count per iteration for each run."""
    fig, ax = plt.subplots(figsize=(6.0, 3.0))
    for label, rows in histories.items():
        ax.plot([r.iteration for r in rows], [r.n_pseudo for r in rows],
                label=label, lw=1.0)
    ax.set_xlabel("iteration")
    ax.set_ylabel("pseudo points")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def _imshow(ax, grid_values, x_lo, x_hi, t_hi, **kw):
    im = ax.imshow(grid_values.T, origin="lower", aspect="auto",
                   extent=(0.0, t_hi, x_lo, x_hi), **kw)
    ax.set_xlabel("t")
    ax.set_ylabel("x")
    return im


def plot_solution_maps(pred, ref, path) -> None:
    """Reference field, prediction, and point-wise absolute error."""
    fig, axes = plt.subplots(1, 3, figsize=(11.0, 3.2))
    lo = min(ref.values.min(), pred.values.min())
    hi = max(ref.values.max(), pred.values.max())
    im0 = _imshow(axes[0], ref.values, ref.x_lo, ref.x_hi, ref.t_hi, vmin=lo, vmax=hi)
    axes[0].set_title("reference")
    _imshow(axes[1], pred.values, ref.x_lo, ref.x_hi, ref.t_hi, vmin=lo, vmax=hi)
    axes[1].set_title("prediction")
    err = np.abs(pred.values - ref.values)
    im2 = _imshow(axes[2], err, ref.x_lo, ref.x_hi, ref.t_hi, cmap="magma")
    axes[2].set_title("point-wise error")
    fig.colorbar(im0, ax=axes[:2], shrink=0.85)
    fig.colorbar(im2, ax=axes[2], shrink=0.85)
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)


def plot_time_slices(pred, ref, path, fractions=(0.15, 0.5, 1.0)) -> None:
    """Prediction vs reference profiles at a few times."""
    fig, axes = plt.subplots(1, len(fractions), figsize=(3.6 * len(fractions), 3.0),
                             sharey=True)
    axes = np.atleast_1d(axes)
    xs = ref.x_coords
    for ax, frac in zip(axes, fractions):
        j = min(int(round(frac * (ref.nt - 1))), ref.nt - 1)
        ax.plot(xs, ref.values[j], "k-", lw=1.2, label="reference")
        ax.plot(xs, pred.values[j], "C3--", lw=1.2, label="prediction")
        ax.set_title(f"t = {ref.t_coords[j]:.3g}", fontsize=9)
        ax.set_xlabel("x")
    axes[0].set_ylabel("u")
    axes[0].legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def plot_compare(per_seed_histories: dict, path) -> None:
    """Loss curves of both arms, one panel per seed."""
    seeds = sorted(per_seed_histories)
    fig, axes = plt.subplots(1, len(seeds), figsize=(4.0 * len(seeds), 3.2),
                             sharey=True)
    axes = np.atleast_1d(axes)
    for ax, seed in zip(axes, seeds):
        for label, rows in per_seed_histories[seed].items():
            ax.semilogy([r.iteration for r in rows],
                        [max(r.loss_total, 1e-300) for r in rows], label=label, lw=0.9)
        ax.set_title(f"seed {seed}", fontsize=9)
        ax.set_xlabel("iteration")
    axes[0].set_ylabel("total loss")
    axes[0].legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
