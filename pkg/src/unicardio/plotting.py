"""SVG figure emission (file output only, Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_overlay(path, generated: np.ndarray, target: np.ndarray | None = None,
                 observed: np.ndarray | None = None, fs: float = 1.0,
                 title: str = "") -> None:
    """Generated-vs-target overlay with the missing region shaded."""
    generated = np.asarray(generated)
    tt = np.arange(generated.size) / fs
    fig, ax = plt.subplots(figsize=(8, 3))
    if observed is not None:
        observed = np.asarray(observed, dtype=bool)
        in_gap = False
        start = 0.0
        for i, obs in enumerate(observed):
            if not obs and not in_gap:
                in_gap, start = True, tt[i]
            elif obs and in_gap:
                ax.axvspan(start, tt[i], color="0.85", zorder=0)
                in_gap = False
        if in_gap:
            ax.axvspan(start, tt[-1], color="0.85", zorder=0)
    if target is not None:
        ax.plot(tt, np.asarray(target), color="0.3", lw=1.0, label="target")
    ax.plot(tt, generated, color="tab:red", lw=1.0, label="generated")
    ax.set_xlabel("time [s]")
    ax.legend(loc="upper right", fontsize=8)
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_trajectory(path, trajectory, fs: float = 1.0, max_panels: int = 6,
                    title: str = "") -> None:
    """Step-wise reverse-process snapshots, noisiest first."""
    if not trajectory:
        raise ValueError("empty trajectory")
    if len(trajectory) > max_panels:
        idx = np.linspace(0, len(trajectory) - 1, max_panels).round().astype(int)
        trajectory = [trajectory[i] for i in idx]
    n = len(trajectory)
    fig, axes = plt.subplots(n, 1, figsize=(8, 1.6 * n), sharex=True)
    if n == 1:
        axes = [axes]
    for ax, (t, x) in zip(axes, trajectory):
        x = np.asarray(x)
        ax.plot(np.arange(x.size) / fs, x, lw=0.9)
        ax.set_ylabel(f"t={t}", fontsize=8)
    axes[-1].set_xlabel("time [s]")
    if title:
        axes[0].set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_training_log(path, records, title: str = "") -> None:
    """Loss trace with phase boundaries marked."""
    iters = [r.iteration for r in records]
    losses = [r.loss for r in records]
    phases = [r.phase for r in records]
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(iters, losses, lw=0.6, color="0.4", alpha=0.6)
    if len(losses) >= 20:
        w = max(1, len(losses) // 100)
        smooth = np.convolve(losses, np.ones(w) / w, mode="valid")
        ax.plot(iters[w - 1:], smooth, lw=1.4, color="tab:blue")
    for i in range(1, len(records)):
        if phases[i] != phases[i - 1]:
            ax.axvline(iters[i], color="0.7", ls="--", lw=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
