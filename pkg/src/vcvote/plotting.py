"""Diagnostic plots: offset-map heatmaps, target/reference distance
distributions, score curves, and detection score maps."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def plot_offset_map(offmap, path, title: str = "") -> None:
    r = offmap.radius
    fig, ax = plt.subplots(figsize=(4, 4))
    im = ax.imshow(offmap.grid, cmap="viridis", origin="upper",
                   extent=(-r - 0.5, r + 0.5, r + 0.5, -r - 0.5))
    ys, xs = np.nonzero(offmap.selected)
    ax.scatter(xs - r, ys - r, s=12, facecolors="none", edgecolors="red",
               linewidths=0.7, label="selected")
    ax.set_xlabel("col offset (cells)")
    ax.set_ylabel("row offset (cells)")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_distributions(cue, path, title: str = "") -> None:
    edges = np.linspace(0.0, cue.r_max, cue.num_bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    width = edges[1] - edges[0]
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar(centers, cue.hist_pos, width=width, alpha=0.55, color="red",
           label="near part")
    ax.bar(centers, cue.hist_neg, width=width, alpha=0.55, color="green",
           label="far from part")
    ax.axvline(cue.threshold, color="black", linestyle="--", linewidth=1,
               label="activation threshold")
    ax.set_xlabel("match distance")
    ax.set_ylabel("bin mass")
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_score_curve(cue, path, title: str = "") -> None:
    edges = np.linspace(0.0, cue.r_max, cue.num_bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    fig, ax = plt.subplots(figsize=(5, 3))
    pos = cue.score_table >= 0
    ax.bar(centers[pos], cue.score_table[pos],
           width=edges[1] - edges[0], color="red")
    ax.bar(centers[~pos], cue.score_table[~pos],
           width=edges[1] - edges[0], color="green")
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xlabel("match distance")
    ax.set_ylabel("evidence (log-likelihood ratio)")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_score_map(score_map, path, title: str = "") -> None:
    img = score_map.l0 if score_map.l0 is not None else score_map.grid
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(img, cmap="magma", origin="upper")
    fig.colorbar(im, ax=ax, fraction=0.046)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_model_plots(bundle, out_dir, top_k: int = 4) -> list[Path]:
    """Offset maps, distributions and score curves for the strongest
    supporting concepts of every part."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for part_id in sorted(bundle.parts):
        pm = bundle.parts[part_id]
        for v in pm.supporting[:top_k]:
            base = f"part{part_id}_concept{v}"
            p1 = out_dir / f"{base}_offsets.png"
            plot_offset_map(pm.offsets[v], p1, title=f"offsets: {base}")
            p2 = out_dir / f"{base}_distributions.png"
            plot_distributions(pm.cues[v], p2, title=f"distributions: {base}")
            p3 = out_dir / f"{base}_score.png"
            plot_score_curve(pm.cues[v], p3, title=f"score: {base}")
            written += [p1, p2, p3]
    return written
