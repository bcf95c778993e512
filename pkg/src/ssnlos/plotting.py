"""Optional matplotlib figures written next to the PGM/PPM/CSV outputs.

Figures are previews only; the byte-exact artifacts are the images and
reports written by :mod:`ssnlos.images` and the CLI.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import ReconMaps  # noqa: E402


def _extent(half: float):
    return (-half, half, -half, half)


def plot_maps(maps: ReconMaps, wall_width: float, path, title: str = "") -> Path:
    """Albedo, depth and the three normal components in one row of panels."""
    half = wall_width / 2.0
    panels = [
        ("albedo", maps.albedo_map, "gray", (0.0, 1.0)),
        ("depth [m]", np.where(maps.mask, maps.depth_map, np.nan), "viridis", None),
    ]
    for c, name in enumerate("xyz"):
        comp = np.where(maps.mask, maps.normal_map[..., c], np.nan)
        panels.append((f"n_{name}", comp, "coolwarm", (-1.0, 1.0)))
    fig, axes = plt.subplots(1, len(panels), figsize=(3.0 * len(panels), 3.2), constrained_layout=True)
    for ax, (name, img, cmap, lim) in zip(axes, panels):
        kw = {} if lim is None else {"vmin": lim[0], "vmax": lim[1]}
        im = ax.imshow(img.T, origin="lower", cmap=cmap, extent=_extent(half), **kw)
        ax.set_title(name)
        ax.set_xlabel("x [m]")
        fig.colorbar(im, ax=ax, shrink=0.8)
    axes[0].set_ylabel("y [m]")
    if title:
        fig.suptitle(title)
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_sweep(rows: list[dict], path, metric: str = "psnr") -> Path:
    """Metric against lambda, one line per method."""
    fig, ax = plt.subplots(figsize=(5.0, 3.5), constrained_layout=True)
    methods = sorted({r["method"] for r in rows})
    for method in methods:
        pts = sorted((float(r["lambda"]), float(r[metric])) for r in rows if r["method"] == method)
        if pts:
            lam, val = zip(*pts)
            ax.plot(lam, val, marker="o", label=method)
    ax.set_xscale("log")
    ax.set_xlabel("lambda")
    ax.set_ylabel(metric)
    ax.legend()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
