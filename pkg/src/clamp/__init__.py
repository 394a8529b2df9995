"""Manifold-packing self-supervised learning at desk scale."""

from .geometry import EmbeddingBatch, SubManifoldSummary, ValidationError, center_and_normalize, summarize_sub_manifold
from .packing_loss import PackingLossReport, batch_loss, batch_loss_gradient, neighbor_count, pair_energy

__all__ = [
    "EmbeddingBatch",
    "SubManifoldSummary",
    "ValidationError",
    "center_and_normalize",
    "summarize_sub_manifold",
    "PackingLossReport",
    "batch_loss",
    "batch_loss_gradient",
    "neighbor_count",
    "pair_energy",
]
