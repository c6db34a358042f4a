"""Latent-space diagnostics: interpolation curves and PCA projection.

Interpolation walks the straight line between two posterior means, decodes
each point greedily, and measures the Hamming distance between the decoded
indices and the decodes at the endpoints.  The projection maps posterior
means to two dimensions and scores how well corpus labels separate there.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import Model
from .notes import DataError, IndexedSequence


def hamming_distance(a: IndexedSequence, b: IndexedSequence) -> int:
    """Count of per-position attribute index mismatches, in [0, 3L]."""
    if len(a) != len(b):
        raise DataError(f"sequences differ in length: {len(a)} vs {len(b)}")
    return int(
        np.count_nonzero(a.delta_idx != b.delta_idx)
        + np.count_nonzero(a.duration_idx != b.duration_idx)
        + np.count_nonzero(a.pitch_idx != b.pitch_idx)
    )


def interpolate(code_a: np.ndarray, code_b: np.ndarray, steps: int) -> list[np.ndarray]:
    """Evenly spaced points on the segment from code_a to code_b, inclusive."""
    if steps < 2:
        raise DataError("interpolation needs at least 2 steps")
    code_a = np.asarray(code_a, dtype=np.float64)
    code_b = np.asarray(code_b, dtype=np.float64)
    if code_a.shape != code_b.shape:
        raise DataError(f"latent dims differ: {code_a.shape} vs {code_b.shape}")
    alphas = np.linspace(0.0, 1.0, steps)
    return [(1.0 - alpha) * code_a + alpha * code_b for alpha in alphas]


@dataclass(frozen=True)
class InterpolationCurve:
    """Hamming distances from each interpolation point to both endpoints."""

    alphas: tuple[float, ...]
    distances_to_a: tuple[float, ...]
    distances_to_b: tuple[float, ...]
    length: int

    def __post_init__(self) -> None:
        if not self.alphas or self.alphas[0] != 0.0 or self.alphas[-1] != 1.0:
            raise DataError("alphas must run from 0 to 1")
        if any(b <= a for a, b in zip(self.alphas, self.alphas[1:])):
            raise DataError("alphas must be strictly increasing")

    def normalized(self) -> tuple[tuple[float, ...], tuple[float, ...]]:
        span = 3 * self.length
        return (
            tuple(d / span for d in self.distances_to_a),
            tuple(d / span for d in self.distances_to_b),
        )


def interpolation_curve(
    model: Model,
    seq_a: IndexedSequence,
    seq_b: IndexedSequence,
    steps: int = 11,
    length: int | None = None,
) -> InterpolationCurve:
    """Curve for one (A, B) pair, decoding greedily at every point."""
    length = len(seq_a) if length is None else length
    mu_a = model.encode_mean(seq_a)
    mu_b = model.encode_mean(seq_b)
    codes = interpolate(mu_a, mu_b, steps)
    decodes = [model.generate_indices(c, length=length, mode="greedy") for c in codes]
    to_a = tuple(float(hamming_distance(d, decodes[0])) for d in decodes)
    to_b = tuple(float(hamming_distance(d, decodes[-1])) for d in decodes)
    alphas = tuple(np.linspace(0.0, 1.0, steps).tolist())
    return InterpolationCurve(alphas, to_a, to_b, length)


def aggregate_interpolation_curve(
    model: Model,
    sequences: Sequence[IndexedSequence],
    pairs: int = 100,
    steps: int = 11,
    rng: np.random.Generator | None = None,
    length: int | None = None,
) -> InterpolationCurve:
    """Mean curve over random pairs, both directions of each pair included.

    Walking every sampled pair in both directions makes the aggregated
    to-A and to-B curves exact mirror images, the symmetry the per-pair
    curves only show on average.
    """
    if len(sequences) < 2:
        raise DataError("need at least two sequences to interpolate between")
    rng = np.random.default_rng(0) if rng is None else rng
    sum_a = np.zeros(steps)
    sum_b = np.zeros(steps)
    count = 0
    for _ in range((pairs + 1) // 2):
        i, j = rng.choice(len(sequences), size=2, replace=False)
        for a, b in ((int(i), int(j)), (int(j), int(i))):
            curve = interpolation_curve(model, sequences[a], sequences[b], steps, length)
            sum_a += np.asarray(curve.distances_to_a)
            sum_b += np.asarray(curve.distances_to_b)
            count += 1
    ref_length = length if length is not None else len(sequences[0])
    return InterpolationCurve(
        tuple(np.linspace(0.0, 1.0, steps).tolist()),
        tuple((sum_a / count).tolist()),
        tuple((sum_b / count).tolist()),
        ref_length,
    )


@dataclass(frozen=True)
class ProjectedCloud:
    """Latent codes projected to the top two principal components."""

    points: tuple[tuple[float, float, str], ...]
    components: np.ndarray  # (2, k), orthonormal rows
    explained_variance_ratio: tuple[float, float]


def pca_project(latents: Sequence[tuple[np.ndarray, str]], dims: int = 2) -> ProjectedCloud:
    """Mean-center and project onto the leading eigenvectors of the covariance.

    Component signs follow a fixed convention (the largest-magnitude entry
    of each component is positive) so repeated runs agree exactly.
    """
    if dims != 2:
        raise DataError("only 2-D projection is supported")
    if len(latents) < 3:
        raise DataError("PCA projection needs at least 3 points")
    matrix = np.stack([np.asarray(vec, dtype=np.float64) for vec, _ in latents])
    labels = [label for _, label in latents]
    if matrix.shape[1] < dims:
        raise DataError(f"latent dim {matrix.shape[1]} is below the projection dim")
    centered = matrix - matrix.mean(axis=0)
    cov = centered.T @ centered / (matrix.shape[0] - 1)
    total = float(np.trace(cov))
    if total <= 0.0:
        raise DataError("degenerate latent cloud: all points are identical")
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:dims]
    components = eigvecs[:, order].T
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    projected = centered @ components.T
    points = tuple(
        (float(x), float(y), label) for (x, y), label in zip(projected, labels)
    )
    ratios = tuple(float(eigvals[i] / total) for i in order)
    return ProjectedCloud(points, components, (ratios[0], ratios[1]))


def cluster_separation(cloud: ProjectedCloud) -> float:
    """Mean silhouette of the corpus labels in the projected plane."""
    labels = [label for _, _, label in cloud.points]
    coords = np.array([(x, y) for x, y, _ in cloud.points])
    unique = sorted(set(labels))
    if len(unique) < 2:
        raise DataError("silhouette needs at least two distinct labels")
    distances = np.sqrt(
        ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(axis=-1)
    )
    label_masks = {label: np.array([l == label for l in labels]) for label in unique}
    scores = []
    for i, label in enumerate(labels):
        own = label_masks[label].copy()
        own[i] = False
        if not own.any():
            scores.append(0.0)  # singleton cluster convention
            continue
        a = distances[i, own].mean()
        b = min(
            distances[i, label_masks[other]].mean()
            for other in unique
            if other != label
        )
        scores.append((b - a) / max(a, b) if max(a, b) > 0 else 0.0)
    return float(np.mean(scores))


def curve_rows(curve: InterpolationCurve) -> list[tuple[float, float, float, float, float]]:
    """CSV rows: alpha, raw distances, and range-normalized distances."""
    norm_a, norm_b = curve.normalized()
    return [
        (alpha, da, db, na, nb)
        for alpha, da, db, na, nb in zip(
            curve.alphas, curve.distances_to_a, curve.distances_to_b, norm_a, norm_b
        )
    ]
