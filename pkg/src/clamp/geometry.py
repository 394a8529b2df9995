"""Normalized embeddings and ellipsoidal sub-manifold summaries."""

from __future__ import annotations

from dataclasses import dataclass
from math import gamma, pi

import numpy as np

EPS_NORM = 1e-12


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


@dataclass
class EmbeddingBatch:
    """Projected embeddings of ``b`` images with ``m`` views each.

    ``raw`` and ``normalized`` have shape ``(b, m, D)``. ``degenerate`` flags
    rows whose deviation from ``global_center`` vanished before normalization.
    """

    raw: np.ndarray
    normalized: np.ndarray
    global_center: np.ndarray
    degenerate: np.ndarray

    @property
    def b(self) -> int:
        return self.raw.shape[0]

    @property
    def m(self) -> int:
        return self.raw.shape[1]

    @property
    def D(self) -> int:
        return self.raw.shape[2]


@dataclass
class SubManifoldSummary:
    centroid: np.ndarray
    cov_diag: np.ndarray
    trace: float
    radius: float
    cov_full: np.ndarray | None = None
    principal_axis: np.ndarray | None = None


def _check_finite(a: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(a)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValidationError(f"non-finite value in {what} at index {idx}")


def center_and_normalize(raw) -> EmbeddingBatch:
    """Subtract the batch-global mean and project every row onto the unit sphere.

    Parameters
    ----------
    raw : array_like, shape (b, m, D)

    Returns
    -------
    EmbeddingBatch
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 3:
        raise ValidationError(f"expected a (b, m, D) array, got shape {raw.shape}")
    b, m, D = raw.shape
    if b * m < 2:
        raise ValidationError(f"need at least two embeddings, got b*m={b * m}")
    _check_finite(raw, "raw embeddings")

    flat = raw.reshape(b * m, D)
    center = flat.mean(axis=0)
    dev = flat - center
    norms = np.linalg.norm(dev, axis=1)
    normalized = dev / (norms + EPS_NORM)[:, None]
    return EmbeddingBatch(
        raw=raw,
        normalized=normalized.reshape(b, m, D),
        global_center=center,
        degenerate=(norms <= EPS_NORM).reshape(b, m),
    )


def _radius(trace, m, r_s):
    return r_s * np.sqrt(np.maximum(trace, 0.0) / m)


def summarize_sub_manifold(views, r_s: float, with_full_cov: bool = False) -> SubManifoldSummary:
    """Centroid, covariance diagonal, trace and radius of one view cloud.

    The covariance uses the biased ``1/m`` normalization and the radius is
    ``r_s * sqrt(trace / m)``.
    """
    views = np.asarray(views, dtype=np.float64)
    if views.ndim != 2:
        raise ValidationError(f"expected an (m, D) array, got shape {views.shape}")
    m = views.shape[0]
    if m < 2:
        raise ValidationError(f"need m >= 2 views to form a covariance, got m={m}")
    if not r_s > 0:
        raise ValidationError(f"r_s must be positive, got {r_s}")

    centroid = views.mean(axis=0)
    dev = views - centroid
    cov_diag = np.mean(dev * dev, axis=0)
    trace = float(cov_diag.sum())
    cov_full = axis = None
    if with_full_cov:
        cov_full = dev.T @ dev / m
        cov_full = 0.5 * (cov_full + cov_full.T)
        np.fill_diagonal(cov_full, cov_diag)
        if trace > 0:
            axis = principal_axis(cov_full)
    return SubManifoldSummary(
        centroid=centroid,
        cov_diag=cov_diag,
        trace=trace,
        radius=float(_radius(trace, m, r_s)),
        cov_full=cov_full,
        principal_axis=axis,
    )


def summarize_batch(normalized, r_s: float):
    """Vectorized centroids, traces and radii for a ``(b, m, D)`` array.

    Returns ``(centroids, traces, radii)`` with shapes ``(b, D)``, ``(b,)``, ``(b,)``.
    Only the covariance diagonal is formed.
    """
    normalized = np.asarray(normalized, dtype=np.float64)
    m = normalized.shape[1]
    if m < 2:
        raise ValidationError(f"need m >= 2 views to form a covariance, got m={m}")
    centroids = normalized.mean(axis=1)
    dev = normalized - centroids[:, None, :]
    traces = np.einsum("ikd,ikd->i", dev, dev) / m
    return centroids, traces, _radius(traces, m, r_s)


def principal_axis(cov_full, tol: float = 1e-8, max_iter: int = 1000, seed: int = 0) -> np.ndarray:
    """Top eigenvector of a symmetric PSD matrix by power iteration.

    Iteration stops once successive iterates differ by less than ``tol`` in
    angle. A small eigengap makes that test stop early, so the result is then
    polished with a few Rayleigh-quotient steps. The sign is fixed so the
    largest-magnitude component is nonnegative.
    """
    A = np.asarray(cov_full, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {A.shape}")
    if not tol > 0:
        raise ValidationError(f"tol must be positive, got {tol}")
    if not np.any(A):
        raise ValidationError("no principal axis: matrix is zero")

    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.shape[0])
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        w = A @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # start vector landed in the null space
            v = rng.standard_normal(A.shape[0])
            v /= np.linalg.norm(v)
            continue
        w /= nw
        # sine of the angle between successive iterates
        change = np.linalg.norm(w - (w @ v) * v)
        v = w
        if change < tol:
            break
    v = _rayleigh_polish(A, v)
    k = np.argmax(np.abs(v))
    if v[k] < 0:
        v = -v
    return v


def _rayleigh_polish(A, v, steps: int = 3):
    scale = max(1.0, float(np.linalg.norm(A)))
    eye = np.eye(A.shape[0])
    mu0 = float(v @ A @ v)
    best = v
    for _ in range(steps):
        mu = float(v @ A @ v)
        if np.linalg.norm(A @ v - mu * v) <= 1e-14 * scale:
            break
        try:
            w = np.linalg.solve(A - mu * eye, v)
        except np.linalg.LinAlgError:
            break
        nw = np.linalg.norm(w)
        if not np.isfinite(nw) or nw == 0:
            break
        v = w / nw
    # keep the polish only if it stayed on the top eigenvector
    if float(v @ A @ v) >= mu0 - 1e-12 * scale:
        best = v
    return best


def volume_and_bound(eigenvalues, r_s: float) -> tuple[float, float]:
    """Volume of the ``K``-dimensional ellipsoid with semi-axes ``r_s*sqrt(lambda)``
    and its RMS-radius upper bound ``V_K * (r_s * sqrt(mean(lambda)))**K``."""
    lam = np.atleast_1d(np.asarray(eigenvalues, dtype=np.float64))
    if lam.size < 1:
        raise ValidationError("need at least one eigenvalue")
    if np.any(~(lam > 0)):
        raise ValidationError("eigenvalues must be strictly positive")
    if not r_s > 0:
        raise ValidationError(f"r_s must be positive, got {r_s}")
    K = lam.size
    unit_ball = pi ** (K / 2) / gamma(K / 2 + 1)
    volume = unit_ball * float(np.prod(r_s * np.sqrt(lam)))
    bound = unit_ball * (r_s * np.sqrt(lam.mean())) ** K
    return volume, bound

