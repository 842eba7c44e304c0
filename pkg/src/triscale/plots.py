"""Figure rendering for the report path: grayscale heatmaps plus labeled
matplotlib figures written next to the delimited output."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .domain import DensityField
from . import observables


def save_grayscale_png(arr: np.ndarray, path) -> None:
    """Raw grayscale heatmap: linear scaling to [0, 255], PNG dimensions equal
    to the array shape (row-major)."""
    a = np.asarray(arr, dtype=float)
    lo, hi = float(a.min()), float(a.max())
    scaled = np.zeros_like(a) if hi <= lo else (a - lo) / (hi - lo)
    plt.imsave(path, np.round(scaled * 255.0).astype(np.uint8),
               cmap="gray", vmin=0, vmax=255, format="png")


def plot_fv_diagnostics(df, path) -> None:
    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
    for ax, col, label in zip(
        axes.ravel(),
        ["mass", "shannon", "rao", "second_moment"],
        ["total mass", "Shannon entropy", "Rao functional", "second moment"],
    ):
        ax.plot(df["t"], df[col])
        ax.set_ylabel(label)
        ax.set_xlabel("t")
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_micro_diagnostics(df, path) -> None:
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
    for ax, col, label in zip(
        axes, ["mass", "count", "second_moment"],
        ["total mass N_t/N", "particle count", "second moment"],
    ):
        ax.plot(df["t"], df[col], marker="o")
        ax.set_xlabel("t")
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_field_snapshots(fields: list[DensityField], out_dir) -> list[str]:
    """Spatial heatmaps, ring-radius heatmaps and the size-marginal evolution."""
    written = []
    grid = fields[0].grid
    for f in fields:
        sp = observables.spatial_marginal(f)
        rad = observables.radial_profile_field(f)
        tag = f"{f.time:g}".replace(".", "p")
        p = os.path.join(out_dir, f"spatial_t{tag}.png")
        save_grayscale_png(sp, p)
        written.append(p)
        p = os.path.join(out_dir, f"radial_t{tag}.png")
        save_grayscale_png(rad.T, p)
        written.append(p)
        fig, ax = plt.subplots(figsize=(5, 4))
        im = ax.imshow(
            sp.T, origin="lower", cmap="viridis",
            extent=[grid.x_min, grid.x_max, grid.x_min, grid.x_max],
        )
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.set_title(f"spatial density, t = {f.time:g}")
        fig.colorbar(im, ax=ax)
        fig.tight_layout()
        p = os.path.join(out_dir, f"spatial_labeled_t{tag}.png")
        fig.savefig(p, dpi=130)
        plt.close(fig)
        written.append(p)
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for f in fields:
        ax.plot(grid.rs, observables.size_marginal(f), label=f"t = {f.time:g}")
    ax.set_xlabel("r")
    ax.set_ylabel("size marginal")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    p = os.path.join(out_dir, "size_marginal.png")
    fig.savefig(p, dpi=130)
    plt.close(fig)
    written.append(p)
    return written
