"""Diagnostics on frozen representations: sub-manifold geometry statistics,
covariance eigenspectrum with a power-law fit, and a linear probe."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import ValidationError, principal_axis

log = logging.getLogger(__name__)

N_BINS = 50


# -- eigenspectrum -------------------------------------------------------------


def jacobi_eigh(A, tol: float = 1e-10, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps stop once the off-diagonal Frobenius norm is at most
    ``tol * max(1, ||A||_F)``. Returns ``(eigenvalues, eigenvectors)`` in the
    order they sit on the final diagonal; columns of the second array are the
    eigenvectors.
    """
    A = np.array(A, dtype=np.float64)
    n = A.shape[0]
    if A.ndim != 2 or A.shape[1] != n:
        raise ValidationError(f"expected a square matrix, got shape {A.shape}")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    target = tol * max(1.0, float(np.linalg.norm(A)))
    for _ in range(max_sweeps):
        off = math.sqrt(2.0 * float(np.sum(np.triu(A, 1) ** 2)))
        if off <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                cp, cq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * cp - s * cq
                A[:, q] = s * cp + c * cq
                rp, rq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                A[p, q] = A[q, p] = 0.0
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    return np.diag(A).copy(), V


def covariance(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    dev = x - x.mean(axis=0)
    return dev.T @ dev / x.shape[0]


def eigenspectrum(representations) -> np.ndarray:
    """Descending eigenvalues of the ``1/n`` covariance of the rows."""
    x = np.asarray(representations, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValidationError(f"need an (n, h) array with n >= 2, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("representations contain non-finite values")
    vals, _ = jacobi_eigh(covariance(x))
    return np.sort(vals)[::-1]


@dataclass
class SpectrumFit:
    eigenvalues: np.ndarray
    fit_range: tuple[int, int]
    exponent: float
    fit_residual: float

    def to_dict(self) -> dict:
        return {
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "fit_range": list(self.fit_range),
            "exponent": self.exponent,
            "fit_residual": self.fit_residual,
        }


def default_fit_window(eigenvalues, positive_tol: float = 1e-10) -> tuple[int, int]:
    lam = np.asarray(eigenvalues)
    h = lam.size
    n_pos = int(np.sum(lam > positive_tol))
    lo = max(5, h // 20)
    hi = min(int(0.7 * h), n_pos)
    if hi <= lo:
        lo, hi = 1, n_pos
    return lo, hi


def power_law_fit(eigenvalues, rank_min: int | None = None, rank_max: int | None = None) -> SpectrumFit:
    """Least-squares line through ``(log n, log lambda_n)`` over ranks
    ``rank_min..rank_max`` (1-based, inclusive); the exponent is minus the slope."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    if rank_min is None or rank_max is None:
        lo, hi = default_fit_window(lam)
        rank_min = lo if rank_min is None else rank_min
        rank_max = hi if rank_max is None else rank_max
    if not 1 <= rank_min < rank_max <= lam.size:
        raise ValidationError(f"invalid fit window [{rank_min}, {rank_max}] for {lam.size} eigenvalues")
    window = lam[rank_min - 1 : rank_max]
    if np.any(window <= 0):
        raise ValidationError("nonpositive eigenvalue inside the fit window; log undefined")
    ranks = np.arange(rank_min, rank_max + 1, dtype=np.float64)
    X = np.stack([np.log(ranks), np.ones_like(ranks)], axis=1)
    y = np.log(window)
    (slope, intercept), *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ np.array([slope, intercept])
    return SpectrumFit(
        eigenvalues=lam,
        fit_range=(int(rank_min), int(rank_max)),
        exponent=float(-slope),
        fit_residual=float(np.sqrt(np.mean(resid**2))),
    )


def write_spectrum_csv(path, eigenvalues) -> None:
    with open(path, "w") as fh:
        fh.write("rank,eigenvalue\n")
        for k, v in enumerate(eigenvalues, 1):
            fh.write(f"{k},{float(v)!r}\n")


# -- linear probe --------------------------------------------------------------


def linear_probe(train_x, train_y, test_x, test_y, epochs: int = 500, lr: float = 0.5,
                 weight_decay: float = 0.0) -> float:
    """Top-1 test accuracy of a softmax classifier on frozen features.

    Features are standardized with the training statistics; the classifier is
    fit by full-batch gradient descent with a cosine-decayed step size from a
    zero start.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    test_x = np.asarray(test_x, dtype=np.float64)
    train_y = np.asarray(train_y).astype(np.int64)
    test_y = np.asarray(test_y).astype(np.int64)
    classes = np.unique(train_y)
    if classes.size < 2:
        raise ValidationError("linear probe needs at least two classes in the training labels")
    if not np.isin(np.unique(test_y), classes).all():
        raise ValidationError("test labels contain classes absent from the training labels")
    if train_x.shape[1] != test_x.shape[1]:
        raise ValidationError(f"feature widths differ: {train_x.shape[1]} vs {test_x.shape[1]}")

    mu = train_x.mean(axis=0)
    sd = train_x.std(axis=0)
    sd[sd == 0] = 1.0
    xtr = (train_x - mu) / sd
    xte = (test_x - mu) / sd
    ytr = np.searchsorted(classes, train_y)
    yte = np.searchsorted(classes, test_y)

    n, h = xtr.shape
    k = classes.size
    W = np.zeros((h, k))
    bias = np.zeros(k)
    onehot = np.eye(k)[ytr]
    for epoch in range(epochs):
        logits = xtr @ W + bias
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / n
        step = lr * 0.5 * (1.0 + math.cos(math.pi * epoch / epochs))
        W -= step * (xtr.T @ g + weight_decay * W)
        bias -= step * g.sum(axis=0)
    pred = np.argmax(xte @ W + bias, axis=1)
    return float(np.mean(pred == yte))


# -- sub-manifold geometry -------------------------------------------------------


@dataclass
class Histogram:
    edges: np.ndarray
    mass: np.ndarray

    @property
    def mean(self) -> float:
        centers = 0.5 * (self.edges[1:] + self.edges[:-1])
        return float(np.sum(centers * self.mass))

    def mass_below(self, value: float) -> float:
        """Mass in bins lying entirely below ``value`` plus the pro-rated share of the straddling bin."""
        lo, hi = self.edges[:-1], self.edges[1:]
        frac = np.clip((value - lo) / np.where(hi > lo, hi - lo, 1.0), 0.0, 1.0)
        return float(np.sum(self.mass * frac))

    def to_dict(self) -> dict:
        return {"edges": self.edges.tolist(), "mass": self.mass.tolist()}


STATISTICS = ("centroid_distance", "centroid_cosine", "alignment_sq_cosine")


@dataclass
class GeometryReport:
    histograms: dict[str, dict[str, Histogram]]
    means: dict[str, dict[str, float]]
    samples_used: int
    augmentations_per_sample: int
    repeats: int
    values: dict[str, dict[str, np.ndarray]] = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "samples_used": self.samples_used,
            "augmentations_per_sample": self.augmentations_per_sample,
            "repeats": self.repeats,
            "means": self.means,
            "histograms": {
                stat: {pop: h.to_dict() for pop, h in pops.items()} for stat, pops in self.histograms.items()
            },
        }


def sub_manifold_features(reps):
    """Centroid and principal axis of one ``(m_a, h)`` view cloud."""
    reps = np.asarray(reps, dtype=np.float64)
    centroid = reps.mean(axis=0)
    cov = covariance(reps)
    if not np.any(cov):
        return centroid, None
    return centroid, principal_axis(cov)


def pair_statistics(centroids, axes, labels):
    """Pairwise statistics over ``i < j`` split into intra- and inter-class lists."""
    C = np.asarray(centroids)
    labels = np.asarray(labels)
    iu, ju = np.triu_indices(len(C), k=1)
    same = labels[iu] == labels[ju]
    diff = C[iu] - C[ju]
    dist = np.linalg.norm(diff, axis=1)
    norms = np.linalg.norm(C, axis=1)
    denom = norms[iu] * norms[ju]
    cos = np.divide(np.einsum("kd,kd->k", C[iu], C[ju]), denom, out=np.zeros_like(dist), where=denom > 0)
    cos = np.clip(cos, -1.0, 1.0)
    have_axis = np.array([a is not None for a in axes])
    A = np.stack([a if a is not None else np.zeros(C.shape[1]) for a in axes])
    align = np.einsum("kd,kd->k", A[iu], A[ju]) ** 2
    ok = have_axis[iu] & have_axis[ju]
    out = {}
    for name, vals, mask in (
        ("centroid_distance", dist, np.ones_like(same)),
        ("centroid_cosine", cos, np.ones_like(same)),
        ("alignment_sq_cosine", np.clip(align, 0.0, 1.0), ok),
    ):
        out[name] = {"intra": vals[mask & same], "inter": vals[mask & ~same]}
    return out


def geometry_report(encode, samples_by_class: dict, augment, m_a: int = 100, repeats: int = 10,
                    samples_per_repeat: int = 800, seed: int = 0) -> GeometryReport:
    """Centroid and orientation statistics of augmentation sub-manifolds.

    Parameters
    ----------
    encode : callable
        Maps an ``(k, d)`` input array to ``(k, h)`` representations.
    samples_by_class : dict
        Class label -> ``(n_c, d)`` array of raw samples.
    augment : callable
        ``augment(sample, m_a, rng)`` returns ``(m_a, d)`` views.
    m_a : int
        Augmentations per sampled image.
    repeats, samples_per_repeat : int
        Independent resamplings; histograms are averaged over them.
    """
    if m_a < 2:
        raise ValidationError(f"need m_a >= 2 augmentations, got {m_a}")
    pool_x, pool_y = [], []
    for label, xs in samples_by_class.items():
        xs = np.asarray(xs)
        if len(xs) < 2:
            log.warning("class %r has fewer than 2 samples; excluded", label)
            continue
        pool_x.append(xs)
        pool_y.append(np.full(len(xs), label))
    if len(pool_x) < 2:
        raise ValidationError("geometry report needs at least two classes with >= 2 samples")
    X = np.concatenate(pool_x)
    Y = np.concatenate(pool_y)
    k = min(samples_per_repeat, len(X))

    per_repeat = []
    for rep in range(repeats):
        rng = np.random.default_rng(np.random.SeedSequence([seed, rep]))
        idx = np.sort(rng.choice(len(X), size=k, replace=False))
        views = np.concatenate([augment(X[i], m_a, rng) for i in idx])
        reps = np.asarray(encode(views), dtype=np.float64).reshape(k, m_a, -1)
        feats = [sub_manifold_features(r) for r in reps]
        per_repeat.append(pair_statistics([f[0] for f in feats], [f[1] for f in feats], Y[idx]))

    histograms, means, values = {}, {}, {}
    for stat in STATISTICS:
        pooled = np.concatenate([r[stat][pop] for r in per_repeat for pop in ("intra", "inter")])
        if pooled.size == 0:
            lo, hi = 0.0, 1.0
        else:
            lo, hi = float(pooled.min()), float(pooled.max())
        if hi <= lo:
            hi = lo + 1.0
        edges = np.linspace(lo, hi, N_BINS + 1)
        histograms[stat], means[stat], values[stat] = {}, {}, {}
        for pop in ("intra", "inter"):
            masses = []
            for r in per_repeat:
                vals = r[stat][pop]
                if vals.size:
                    counts, _ = np.histogram(vals, bins=edges)
                    masses.append(counts / counts.sum())
            mass = np.mean(masses, axis=0) if masses else np.zeros(N_BINS)
            histograms[stat][pop] = Histogram(edges, mass)
            allv = np.concatenate([r[stat][pop] for r in per_repeat])
            values[stat][pop] = allv
            means[stat][pop] = float(allv.mean()) if allv.size else float("nan")
    return GeometryReport(histograms, means, k, m_a, repeats, values)
