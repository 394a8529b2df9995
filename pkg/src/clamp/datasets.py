"""Synthetic isotropic Gaussian-blob benchmark."""

from __future__ import annotations

import numpy as np

from .geometry import ValidationError


def blob_centers(num_classes: int, d: int, separation: float, sigma: float = 1.0, seed: int = 0):
    """Class centers on a randomly rotated simplex-like frame.

    Centers sit at ``separation * sigma / sqrt(2)`` along orthonormal
    directions, so every pair is exactly ``separation * sigma`` apart.
    """
    if num_classes > d:
        raise ValidationError(f"need d >= num_classes for orthogonal centers, got d={d}, classes={num_classes}")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return q[:, :num_classes].T * (separation * sigma / np.sqrt(2.0))


def make_blobs(
    num_classes: int = 10,
    per_class: int = 200,
    d: int = 32,
    separation: float = 8.0,
    sigma: float = 1.0,
    seed: int = 0,
    center_seed: int = 0,
):
    """Return ``(data float32 (n, d), labels uint16 (n,))`` in class-major order.

    ``center_seed`` fixes the class centers so train and test sets drawn with
    different ``seed`` share the same classes.
    """
    centers = blob_centers(num_classes, d, separation, sigma, center_seed)
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(num_classes), per_class)
    data = centers[labels] + sigma * rng.standard_normal((labels.size, d))
    return data.astype(np.float32), labels.astype(np.uint16)
