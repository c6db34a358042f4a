"""Headless figure rendering for the report paths.

Every CLI command that emits delimited output also renders the matching
figure next to it, as PNG plus SVG.  The Agg backend keeps this working
without a display.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .analysis import InterpolationCurve, ProjectedCloud

_FORMATS = ("png", "svg")


def _save(fig, out_base: Path) -> list[Path]:
    written = []
    for ext in _FORMATS:
        target = out_base.with_suffix(f".{ext}")
        fig.savefig(target, bbox_inches="tight")
        written.append(target)
    plt.close(fig)
    return written


def render_interpolation(curve: InterpolationCurve, out_base: Path) -> list[Path]:
    """Distance-to-endpoint curves along the interpolation path."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(curve.alphas, curve.distances_to_a, marker="o", label="distance to A")
    ax.plot(curve.alphas, curve.distances_to_b, marker="s", label="distance to B")
    ax.set_xlabel("interpolation position")
    ax.set_ylabel("Hamming distance")
    ax.set_title("Latent interpolation")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, out_base)


def render_latent_cloud(
    cloud: ProjectedCloud, silhouette: float, out_base: Path
) -> list[Path]:
    """2-D scatter of projected latent codes, colored by corpus."""
    fig, ax = plt.subplots(figsize=(6, 5))
    labels = sorted({label for _, _, label in cloud.points})
    for label in labels:
        xs = [x for x, _, l in cloud.points if l == label]
        ys = [y for _, y, l in cloud.points if l == label]
        ax.scatter(xs, ys, s=12, alpha=0.7, label=label)
    evr = cloud.explained_variance_ratio
    ax.set_xlabel(f"component 1 ({evr[0]:.1%} var)")
    ax.set_ylabel(f"component 2 ({evr[1]:.1%} var)")
    ax.set_title(f"Latent space by corpus (silhouette {silhouette:.3f})")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, out_base)


def render_training_metrics(
    rows: Sequence[tuple[int, float, float, float, float]], out_base: Path
) -> list[Path]:
    """Reconstruction/KL trajectories from a metrics log."""
    steps = [r[0] for r in rows]
    fig, (ax_loss, ax_kl) = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
    ax_loss.plot(steps, [r[2] for r in rows], label="reconstruction")
    ax_loss.plot(steps, [r[4] for r in rows], label="total", alpha=0.7)
    ax_loss.set_ylabel("loss (nats)")
    ax_loss.legend()
    ax_loss.grid(True, alpha=0.3)
    ax_kl.plot(steps, [r[3] for r in rows], label="KL", color="tab:red")
    ax_kl.plot(steps, [r[1] for r in rows], label="beta", color="tab:gray", alpha=0.7)
    ax_kl.set_xlabel("step")
    ax_kl.set_ylabel("KL (nats) / beta")
    ax_kl.legend()
    ax_kl.grid(True, alpha=0.3)
    return _save(fig, out_base)
