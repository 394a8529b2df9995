"""Short-range repulsive packing loss over augmentation sub-manifolds.

The overlap energy sums ``(1 - d_ij / (r_i + r_j))**2`` over every ordered pair
``i != j`` whose centroids are closer than the sum of their radii, and the
training loss is its logarithm. :func:`batch_loss_gradient` back-propagates the
log loss by hand through the pair energies, centroids, radii, the unit-norm
projection and the batch-mean centering.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .geometry import EPS_NORM, EmbeddingBatch, ValidationError, summarize_batch

EPS_LOG = 1e-12


@dataclass
class PackingLossReport:
    overlap_energy: float
    log_loss: float
    absorbing: bool
    per_manifold_neighbors: np.ndarray
    pair_index: np.ndarray  # (P, 2) ordered pairs
    pair_distance: np.ndarray
    pair_energy: np.ndarray
    centroids: np.ndarray
    radii: np.ndarray
    grad_raw: np.ndarray | None = field(default=None, repr=False)

    @property
    def pairs(self) -> list[tuple[int, int, float, float]]:
        """Ordered overlapping pairs as ``(i, j, distance, pair_energy)``."""
        return [
            (int(i), int(j), float(d), float(e))
            for (i, j), d, e in zip(self.pair_index, self.pair_distance, self.pair_energy)
        ]


def pair_energy(dist: float, r_i: float, r_j: float) -> float:
    s = r_i + r_j
    if s <= 0 or dist >= s:
        return 0.0
    return (1.0 - dist / s) ** 2


def _check_batch(batch: EmbeddingBatch, r_s: float) -> None:
    if batch.b < 2:
        raise ValidationError(f"need b >= 2 sub-manifolds, got b={batch.b}")
    if not r_s > 0:
        raise ValidationError(f"r_s must be positive, got {r_s}")


def _pairwise(centroids, radii):
    """Dense distance, radius-sum and overlap mask matrices (diagonal excluded)."""
    dist = cdist(centroids, centroids)
    rsum = radii[:, None] + radii[None, :]
    overlap = (dist < rsum) & (rsum > 0)
    np.fill_diagonal(overlap, False)
    return dist, rsum, overlap


def _evaluate(batch: EmbeddingBatch, r_s: float, *, with_grad: bool) -> PackingLossReport:
    _check_batch(batch, r_s)
    z = batch.normalized
    b, m, D = z.shape
    centroids, traces, radii = summarize_batch(z, r_s)
    dist, rsum, overlap = _pairwise(centroids, radii)

    safe_rsum = np.where(overlap, rsum, 1.0)
    gap = np.where(overlap, 1.0 - dist / safe_rsum, 0.0)
    energy = gap * gap
    overlap_energy = float(energy.sum())
    log_loss = float(np.log(overlap_energy + EPS_LOG))

    ii, jj = np.nonzero(overlap)
    report = PackingLossReport(
        overlap_energy=overlap_energy,
        log_loss=log_loss,
        absorbing=overlap_energy == 0.0,
        per_manifold_neighbors=overlap.sum(axis=1),
        pair_index=np.stack([ii, jj], axis=1),
        pair_distance=dist[ii, jj],
        pair_energy=energy[ii, jj],
        centroids=centroids,
        radii=radii,
    )
    if not with_grad:
        return report

    if report.absorbing:
        report.grad_raw = np.zeros_like(batch.raw)
        return report

    # d log(E + eps) / dE, and the ordered sum counts each pair from both ends
    scale = 1.0 / (overlap_energy + EPS_LOG)
    dE_dd = -2.0 * gap / safe_rsum
    dE_ds = 2.0 * gap * dist / (safe_rsum * safe_rsum)
    w_d = 2.0 * scale * dE_dd
    w_s = 2.0 * scale * dE_ds

    # centroid gradient: sum_j w_ij (Z_i - Z_j) / d_ij, zero for coincident centroids
    inv_d = np.divide(w_d, dist, out=np.zeros_like(dist), where=dist > 0)
    g_centroid = inv_d.sum(axis=1)[:, None] * centroids - inv_d @ centroids
    g_radius = w_s.sum(axis=1)

    # r = r_s sqrt(T / m), T = mean_k |z_k - Z|^2  =>  dr/dz_k = r_s (z_k - Z) / (m sqrt(m T))
    dev = z - centroids[:, None, :]
    denom = m * np.sqrt(m * traces)
    dr_coef = np.divide(r_s * g_radius, denom, out=np.zeros(b), where=traces > 0)
    g_norm = g_centroid[:, None, :] / m + dr_coef[:, None, None] * dev

    report.grad_raw = _normalize_backward(batch, g_norm)
    return report


def _normalize_backward(batch: EmbeddingBatch, g_norm: np.ndarray) -> np.ndarray:
    """Pull a gradient on normalized rows back to the raw rows through
    ``(z - c) / (|z - c| + eps)`` and the batch mean ``c``."""
    b, m, D = batch.raw.shape
    u = batch.raw.reshape(b * m, D) - batch.global_center
    g = g_norm.reshape(b * m, D)
    n = np.linalg.norm(u, axis=1)
    live = n > EPS_NORM
    inv = np.where(live, 1.0 / (n + EPS_NORM), 0.0)
    radial = np.where(live, np.einsum("kd,kd->k", u, g) / np.where(live, n, 1.0), 0.0)
    g_u = inv[:, None] * g - (inv * inv * radial)[:, None] * u
    g_raw = g_u - g_u.mean(axis=0)
    return g_raw.reshape(b, m, D)


def batch_loss(batch: EmbeddingBatch, r_s: float) -> PackingLossReport:
    """Overlap energy, log loss and interacting pairs for a normalized batch."""
    return _evaluate(batch, r_s, with_grad=False)


def batch_loss_gradient(batch: EmbeddingBatch, r_s: float) -> PackingLossReport:
    """Like :func:`batch_loss`, with ``grad_raw`` = d(log loss)/d(raw embeddings)."""
    return _evaluate(batch, r_s, with_grad=True)


def neighbor_count(batch: EmbeddingBatch, r_s: float) -> np.ndarray:
    """Number of other sub-manifolds whose centroid lies within the radius sum."""
    _check_batch(batch, r_s)
    centroids, _, radii = summarize_batch(batch.normalized, r_s)
    _, _, overlap = _pairwise(centroids, radii)
    return overlap.sum(axis=1)
