"""Figures written next to the CSV/JSON artifacts. Headless (Agg) only."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Circle  # noqa: E402

from .tf_model import UNIT_DISK_RADIUS  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps the PNG bytes reproducible
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def radial_density(profile, plateau: float, droplet_radius: float, path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    r = profile.radius
    ax.errorbar(r, profile.density, yerr=profile.stderr, fmt=".", ms=3, lw=0.8, label="MC")
    ax.axhline(plateau, color="k", ls="--", lw=0.8, label="1/(pi ell)")
    ax.axvline(droplet_radius, color="0.5", ls=":", lw=0.8)
    ax.set_xlabel("|z| (scaled)")
    ax.set_ylabel("density")
    ax.set_ylim(bottom=0)
    ax.legend(frameon=False)
    ax.set_title(title)
    return _save(fig, path)


def density_map(hist, path, disks=None, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 5))
    (x0, y0), c = hist.origin, hist.cell
    ny, nx = hist.shape
    im = ax.imshow(hist.density, origin="lower", extent=(x0, x0 + nx * c, y0, y0 + ny * c),
                   cmap="viridis")
    fig.colorbar(im, ax=ax, shrink=0.8)
    for d in disks or []:
        if d.exceeds:
            ax.add_patch(Circle(d.center, d.radius, fill=False, ec="r", lw=1.0))
    ax.set_aspect("equal")
    ax.set_title(title)
    return _save(fig, path)


def tf_solution(sol, path, title: str = "") -> Path:
    grid = sol.grid
    x0, x1, y0, y1 = grid.extent
    fig, axes = plt.subplots(1, 2, figsize=(10, 4.5))
    axes[0].imshow(sol.sigma.values, origin="lower", extent=(x0, x1, y0, y1), cmap="Greys",
                   vmin=0, vmax=1)
    axes[0].set_title("sigma")
    im = axes[1].imshow(sol.phi.values, origin="lower", extent=(x0, x1, y0, y1), cmap="magma")
    fig.colorbar(im, ax=axes[1], shrink=0.8)
    axes[1].set_title("Phi")
    p = sol.nuclei.positions
    for ax in axes:
        for line in sol.region.boundary:
            ax.plot(line[:, 0], line[:, 1], "c-", lw=1)
        ax.plot(p[:, 0], p[:, 1], "r+", ms=8)
        ax.set_aspect("equal")
    fig.suptitle(title)
    return _save(fig, path)


def configuration(points, path, exclusion_radius: float = UNIT_DISK_RADIUS,
                  highlight=(), title: str = "") -> Path:
    pts = np.asarray(points)
    fig, ax = plt.subplots(figsize=(5.5, 5.5))
    for i, p in enumerate(pts):
        ax.add_patch(Circle(p, exclusion_radius, fill=False, lw=0.5,
                            ec="r" if i in highlight else "0.6"))
    ax.plot(pts[:, 0], pts[:, 1], "k.", ms=4)
    lim = np.abs(pts).max() + 1.0 if len(pts) else 1.0
    ax.set_xlim(-lim, lim)
    ax.set_ylim(-lim, lim)
    ax.set_aspect("equal")
    ax.set_title(title)
    return _save(fig, path)


def energy_summary(rows, path, title: str = "") -> Path:
    """Bar chart of trap-energy / bathtub ratios; ``rows`` are EnergyReport dicts."""
    fig, ax = plt.subplots(figsize=(max(5, 0.7 * len(rows) + 2), 4))
    labels = [r["label"] for r in rows]
    ratio = np.array([r["ratio"] for r in rows])
    err = np.array([r["ratio_stderr"] for r in rows])
    ax.bar(range(len(rows)), ratio - 1.0, yerr=3 * err, color="tab:blue", alpha=0.8)
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("E / E_bathtub - 1")
    ax.set_title(title)
    if len(rows):
        pad = 0.1 * max(1e-3, float(np.abs(ratio - 1).max()))
        ax.set_ylim(min(0.0, float((ratio - 1).min())) - pad, float((ratio - 1).max()) + pad)
    return _save(fig, path)


def disk_exceedance(disk_rows, path, bound: float, tolerance: float, title: str = "") -> Path:
    """Max disk mean per (label, alpha) against the tolerated bound."""
    fig, ax = plt.subplots(figsize=(max(5, 0.7 * len(disk_rows) + 2), 4))
    names = [f"{r['label']} a={r['alpha']}" for r in disk_rows]
    ax.bar(range(len(names)), [r["max_mean"] / bound for r in disk_rows], color="tab:green")
    ax.axhline(1.0, color="k", lw=0.8)
    ax.axhline(1.0 + tolerance, color="r", ls="--", lw=0.8)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("max disk mean / bound")
    lo = min([0.9] + [r["max_mean"] / bound for r in disk_rows])
    ax.set_ylim(math.floor(lo * 20) / 20, 1.0 + 2 * tolerance)
    ax.set_title(title)
    return _save(fig, path)
