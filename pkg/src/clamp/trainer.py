"""Desk-scale pretraining loop: multi-view augmentation of vector data, dense
encoder, packing loss, LARS/SGD updates and per-epoch diagnostics."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist

from . import io
from .geometry import ValidationError, center_and_normalize, summarize_batch
from .nn import DenseNet, OptimizerState, backward, forward, init_dense_net, lr_schedule, optimizer_step
from .packing_loss import batch_loss, batch_loss_gradient

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class AugmentConfig:
    noise_sigma: float = 1.0
    dropout_p: float = 0.1
    scale_range: tuple[float, float] = (0.8, 1.2)

    def validate(self):
        if self.noise_sigma < 0:
            raise ValidationError(f"augment.noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 0 <= self.dropout_p < 1:
            raise ValidationError(f"augment.dropout_p must be in [0, 1), got {self.dropout_p}")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValidationError(f"augment.scale_range must satisfy 0 < lo <= hi, got {self.scale_range}")


@dataclass
class TrainConfig:
    b: int = 64
    m: int = 4
    r_s: float = 3.0
    epochs: int = 30
    warmup_steps: int = 10
    base_lr: float = 2.0
    momentum: float = 0.9
    weight_decay: float = 1e-6
    trust_coefficient: float = 1e-3
    optimizer: str = "lars"
    hidden: tuple[int, ...] = (128,)
    repr_dim: int = 64
    head: tuple[int, ...] = (64, 32)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0
    dataset: str = ""
    val_fraction: float = 0.01

    def validate(self):
        if self.b < 2:
            raise ValidationError(f"train.b must be >= 2, got {self.b}")
        if self.m < 2 or self.m % 2:
            raise ValidationError(f"train.m must be an even number >= 2, got {self.m}")
        if not self.r_s > 0:
            raise ValidationError(f"train.r_s must be positive, got {self.r_s}")
        if self.epochs < 0:
            raise ValidationError(f"train.epochs must be >= 0, got {self.epochs}")
        if not 0 < self.val_fraction < 1:
            raise ValidationError(f"train.val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.optimizer not in ("lars", "sgd_momentum"):
            raise ValidationError(f"train.optimizer must be 'lars' or 'sgd_momentum', got {self.optimizer!r}")
        self.augment.validate()

    def widths(self, in_dim: int) -> list[int]:
        return [in_dim, *self.hidden, self.repr_dim, *self.head]

    @property
    def split_index(self) -> int:
        return len(self.hidden) + 1


@dataclass
class MetricsRecord:
    epoch: int
    mean_log_loss: float
    mean_neighbors: float
    mean_manifold_size: float
    mean_centroid_distance: float
    absorbing_batch_fraction: float
    wall_seconds: float


def augment_views(sample, m: int, cfg: AugmentConfig, rng) -> np.ndarray:
    """``m`` views of one sample: the first half with Gaussian noise only, the
    second half with noise, coordinate dropout and a random global scale."""
    if m % 2:
        raise ValidationError(f"m must be even to split views between two pipelines, got m={m}")
    x = np.asarray(sample, dtype=np.float64)
    half = m // 2
    d = x.shape[0]
    views = np.empty((m, d))
    views[:half] = x + cfg.noise_sigma * rng.standard_normal((half, d))
    noisy = x + cfg.noise_sigma * rng.standard_normal((half, d))
    keep = rng.random((half, d)) >= cfg.dropout_p
    scale = rng.uniform(cfg.scale_range[0], cfg.scale_range[1], size=(half, 1))
    views[half:] = noisy * keep * scale
    return views


def _sample_rng(*counter) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(c) for c in counter]))


def _augment_batch(x, idx, m, aug, *counter) -> np.ndarray:
    """Views of ``x[idx]`` as a ``(len(idx) * m, d)`` array, seeded per sample."""
    return np.concatenate([augment_views(x[i], m, aug, _sample_rng(*counter, i)) for i in idx])


def split_validation(n: int, fraction: float, seed: int):
    """Seeded ``(train_idx, val_idx)`` with at least two validation samples."""
    perm = np.random.default_rng(np.random.SeedSequence([seed, 0xA1])).permutation(n)
    n_val = max(2, int(round(fraction * n)))
    if n - n_val < 2:
        raise ValidationError(f"dataset of {n} samples is too small for a validation split")
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


_VAL_STREAM = 0x7A1


def embed_views(net: DenseNet, x, idx, cfg: TrainConfig, *counter):
    """Augmented embeddings of ``x[idx]`` as a ``(len(idx), m, D)`` array."""
    views = _augment_batch(x, idx, cfg.m, cfg.augment, *counter)
    _, emb, _ = forward(net, views)
    return emb.reshape(len(idx), cfg.m, -1)


def evaluate(net: DenseNet, x, idx, cfg: TrainConfig) -> dict:
    """Neighbor count, manifold size, centroid spread and log loss on a held-out set.

    The views are drawn from a fixed stream so successive epochs see the same
    augmentations.
    """
    batch = center_and_normalize(embed_views(net, x, idx, cfg, cfg.seed, _VAL_STREAM))
    report = batch_loss(batch, cfg.r_s)
    _, traces, _ = summarize_batch(batch.normalized, cfg.r_s)
    return {
        "mean_neighbors": float(report.per_manifold_neighbors.mean()),
        "mean_manifold_size": float(np.sqrt(traces / cfg.m).mean()),
        "mean_centroid_distance": float(pdist(report.centroids).mean()),
        "val_log_loss": report.log_loss,
    }


def _load_data(cfg: TrainConfig, data, labels):
    if data is not None:
        return np.asarray(data, dtype=np.float64), labels
    if not cfg.dataset:
        raise ValidationError("dataset path is not set (train.dataset)")
    try:
        x, y, _ = io.read_dataset(cfg.dataset)
    except OSError as exc:
        raise OSError(f"cannot read dataset {cfg.dataset}: {exc}") from exc
    return x.astype(np.float64), y


def train(cfg: TrainConfig, data=None, labels=None, out_dir=None, return_full: bool = False):
    """Pretrain an encoder with the packing loss.

    Returns ``(backbone, records)``; with ``return_full`` the network keeps its
    projection head. When ``out_dir`` is given, ``checkpoint.clmp`` (backbone +
    head) and ``metrics.jsonl`` are written there.
    """
    cfg.validate()
    x, _ = _load_data(cfg, data, labels)
    train_idx, val_idx = split_validation(len(x), cfg.val_fraction, cfg.seed)
    if len(train_idx) < cfg.b:
        raise ValidationError(f"train.b={cfg.b} exceeds the {len(train_idx)} training samples")

    net = init_dense_net(cfg.widths(x.shape[1]), cfg.split_index, seed=cfg.seed)
    opt = OptimizerState(
        kind=cfg.optimizer,
        base_lr=cfg.base_lr,
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
        trust_coefficient=cfg.trust_coefficient,
    )
    lr_max = cfg.base_lr * cfg.b / 256
    steps_per_epoch = len(train_idx) // cfg.b
    total = cfg.epochs * steps_per_epoch

    metrics_path = ckpt_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "metrics.jsonl"
        metrics_path.write_text("")
        ckpt_path = out_dir / "checkpoint.clmp"
        io.save_checkpoint(ckpt_path, net)

    records = []
    t = 0
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        order = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch])).permutation(train_idx)
        losses, absorbing = [], 0
        for step in range(steps_per_epoch):
            idx = order[step * cfg.b : (step + 1) * cfg.b]
            views = _augment_batch(x, idx, cfg.m, cfg.augment, cfg.seed, epoch)
            _, emb, tape = forward(net, views)
            batch = center_and_normalize(emb.reshape(cfg.b, cfg.m, -1))
            report = batch_loss_gradient(batch, cfg.r_s)
            if not np.isfinite(report.log_loss) or not np.all(np.isfinite(report.grad_raw)):
                _dump(out_dir, epoch, step, idx, views)
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {step}")
            losses.append(report.log_loss)
            lr_t = lr_schedule(t, cfg.warmup_steps, total, lr_max)
            t += 1
            if report.absorbing:
                absorbing += 1
                continue
            grads = backward(net, tape, report.grad_raw.reshape(cfg.b * cfg.m, -1))
            optimizer_step(opt, net, grads, lr_t)

        diag = evaluate(net, x, val_idx, cfg)
        rec = MetricsRecord(
            epoch=epoch,
            mean_log_loss=float(np.mean(losses)) if losses else float("nan"),
            mean_neighbors=diag["mean_neighbors"],
            mean_manifold_size=diag["mean_manifold_size"],
            mean_centroid_distance=diag["mean_centroid_distance"],
            absorbing_batch_fraction=absorbing / max(steps_per_epoch, 1),
            wall_seconds=time.perf_counter() - start,
        )
        records.append(rec)
        log.info("epoch %d: loss %.4f neighbors %.3f size %.4f", epoch, rec.mean_log_loss,
                 rec.mean_neighbors, rec.mean_manifold_size)
        if out_dir is not None:
            io.append_jsonl(metrics_path, dataclasses.asdict(rec))
            io.save_checkpoint(ckpt_path, net)

    return (net if return_full else net.backbone()), records


def _dump(out_dir, epoch, step, idx, views):
    if out_dir is None:
        return
    np.savez(Path(out_dir) / f"nonfinite_e{epoch}_b{step}.npz", indices=idx, views=views)


def sweep(cfg: TrainConfig, axis: str, values, data, labels, probe_epochs: int = 200, probe_lr: float = 0.5):
    """Independent runs over one hyperparameter, each followed by a linear probe
    (train split -> validation split). Returns one row per value."""
    from .analysis import linear_probe

    field_name = {"r_s": "r_s", "m": "m", "lr": "base_lr"}.get(axis)
    if field_name is None:
        raise ValidationError(f"sweep axis must be one of r_s, m, lr; got {axis!r}")
    if not len(values):
        raise ValidationError("sweep needs at least one value")
    x = np.asarray(data, dtype=np.float64)
    y = np.asarray(labels)
    rows = []
    for value in values:
        run_cfg = dataclasses.replace(cfg, **{field_name: type(getattr(cfg, field_name))(value)})
        backbone, records = train(run_cfg, x, y)
        tr, va = split_validation(len(x), run_cfg.val_fraction, run_cfg.seed)
        acc = linear_probe(backbone.encode(x[tr]), y[tr], backbone.encode(x[va]), y[va],
                           epochs=probe_epochs, lr=probe_lr)
        row = {"axis": axis, "value": value, "probe_accuracy": acc}
        if records:
            row.update(dataclasses.asdict(records[-1]))
        rows.append(row)
    return rows
