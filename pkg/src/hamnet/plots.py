"""Figure rendering for the CLI report path.

Each report-producing subcommand can drop a PNG next to its CSV. Figures
are written with the Agg backend and without a date stamp so repeated runs
produce identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVE_OPTS = {"dpi": 110, "metadata": {"Date": None}}


def _finish(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def plot_trace(trace, path) -> None:
    """Energy and velocity history of a relaxation."""
    t = [row.t for row in trace.rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax1.plot(t, [row.energy for row in trace.rows], color="tab:blue")
    ax1.set_xlabel("t")
    ax1.set_ylabel("energy")
    ax1.set_title("energy descent")
    speeds = np.maximum([row.max_velocity for row in trace.rows], 1e-300)
    ax2.semilogy(t, speeds, color="tab:red")
    ax2.set_xlabel("t")
    ax2.set_ylabel("max |dx/dt|")
    ax2.set_title("convergence")
    _finish(fig, path)


def plot_capacity(table, path) -> None:
    """Success rate vs sharpness, one curve per stored-pattern count."""
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    ks = sorted({row.k for row in table.rows})
    for k in ks:
        cells = sorted((r for r in table.rows if r.k == k), key=lambda r: r.beta)
        ax.plot(
            [r.beta for r in cells],
            [r.success_rate for r in cells],
            marker="o",
            label=f"K={k}",
        )
    ax.set_xscale("log")
    ax.set_xlabel("beta")
    ax.set_ylabel("recall success rate")
    ax.set_ylim(-0.05, 1.05)
    ax.legend()
    _finish(fig, path)


def plot_loss_curve(history, path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    ax.semilogy(range(len(history)), np.maximum(history, 1e-300), color="tab:green")
    ax.set_xlabel("epoch")
    ax.set_ylabel("denoising loss")
    _finish(fig, path)


def _show_tensor(ax, x, title) -> None:
    x = np.asarray(x)
    if x.ndim == 3 and x.shape[2] == 1:
        x = x[:, :, 0]
    if x.ndim == 2:
        ax.imshow(x, cmap="gray", vmin=-1.0, vmax=1.0, interpolation="nearest")
        ax.set_xticks([])
        ax.set_yticks([])
    else:
        ax.plot(x.ravel(), drawstyle="steps-mid")
    ax.set_title(title, fontsize=9)


def plot_retrieval(cue, retrieved, target, path) -> None:
    cols = 3 if target is not None else 2
    fig, axes = plt.subplots(1, cols, figsize=(2.6 * cols, 2.8))
    _show_tensor(axes[0], cue, "cue")
    _show_tensor(axes[1], retrieved, "retrieved")
    if target is not None:
        _show_tensor(axes[2], target, "target")
    _finish(fig, path)


def plot_assembly(composites, cues, retrieved, path) -> None:
    n = len(composites)
    fig, axes = plt.subplots(n, 3, figsize=(7.5, 2.6 * n), squeeze=False)
    for i in range(n):
        _show_tensor(axes[i][0], composites[i], f"memory {i}")
        _show_tensor(axes[i][1], cues[i], "masked cue")
        _show_tensor(axes[i][2], retrieved[i], "retrieved")
    _finish(fig, path)
