"""Dense encoder + projection head with a hand-written reverse pass, and the
LARS / SGD-momentum optimizers with a warmup-cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import ValidationError

ACTIVATIONS = ("relu", "identity")


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"


@dataclass
class DenseNet:
    """Stack of affine layers; ``layers[:split_index]`` is the backbone and the
    rest is the projection head."""

    layers: list[Layer]
    split_index: int
    version: int = 0

    def __post_init__(self):
        if not 0 < self.split_index <= len(self.layers):
            raise ValidationError(
                f"split_index must be in [1, {len(self.layers)}], got {self.split_index}"
            )
        for k, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ValidationError(f"layer {k}: unknown activation {layer.activation!r}")
            if layer.bias.shape != (layer.weight.shape[0],):
                raise ValidationError(f"layer {k}: bias shape {layer.bias.shape} does not match weight")
            if k and layer.weight.shape[1] != self.layers[k - 1].weight.shape[0]:
                raise ValidationError(
                    f"layer {k}: input width {layer.weight.shape[1]} does not chain with "
                    f"previous output width {self.layers[k - 1].weight.shape[0]}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def repr_dim(self) -> int:
        return self.layers[self.split_index - 1].weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    def backbone(self) -> "DenseNet":
        """Copy of the encoder with the projection head dropped."""
        layers = [
            Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers[: self.split_index]
        ]
        return DenseNet(layers, split_index=len(layers))

    def copy(self) -> "DenseNet":
        layers = [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        return DenseNet(layers, split_index=self.split_index)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def encode(self, x) -> np.ndarray:
        """Backbone representations, no tape."""
        h = np.asarray(x, dtype=np.float64)
        for layer in self.layers[: self.split_index]:
            h = _apply(layer, h)
        return h


def init_dense_net(widths, split_index: int, seed: int = 0, repr_activation: str = "relu") -> DenseNet:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases.

    ``widths`` lists every layer width from input to output. Hidden layers use
    ReLU, the last backbone layer uses ``repr_activation`` and the output layer
    is linear.
    """
    rng = np.random.default_rng(seed)
    n = len(widths) - 1
    layers = []
    for k in range(n):
        fan_in, fan_out = widths[k], widths[k + 1]
        bound = 1.0 / math.sqrt(fan_in)
        W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        if k == n - 1:
            act = "identity"
        elif k == split_index - 1:
            act = repr_activation
        else:
            act = "relu"
        layers.append(Layer(W, np.zeros(fan_out), act))
    return DenseNet(layers, split_index=split_index)


def _apply(layer: Layer, h: np.ndarray) -> np.ndarray:
    a = h @ layer.weight.T + layer.bias
    return np.maximum(a, 0.0) if layer.activation == "relu" else a


@dataclass
class Tape:
    net_id: int
    version: int
    inputs: list[np.ndarray] = field(default_factory=list)  # input to each layer
    masks: list[np.ndarray | None] = field(default_factory=list)  # ReLU masks


def forward(net: DenseNet, inputs) -> tuple[np.ndarray, np.ndarray, Tape]:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ValidationError(f"input width {x.shape[-1]} does not match network input width {net.in_dim}")
    tape = Tape(net_id=id(net), version=net.version)
    h = x
    reps = None
    for k, layer in enumerate(net.layers):
        tape.inputs.append(h)
        a = h @ layer.weight.T + layer.bias
        if layer.activation == "relu":
            mask = a > 0
            h = np.where(mask, a, 0.0)
        else:
            mask = None
            h = a
        tape.masks.append(mask)
        if k == net.split_index - 1:
            reps = h
    return reps, h, tape


def backward(net: DenseNet, tape: Tape, upstream_grad) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-layer ``(d weight, d bias)`` for a gradient on the embeddings."""
    if tape.net_id != id(net) or tape.version != net.version or len(tape.inputs) != len(net.layers):
        raise ValidationError("stale tape: parameters changed or tape belongs to another network")
    g = np.asarray(upstream_grad, dtype=np.float64)
    if g.shape != (tape.inputs[0].shape[0], net.out_dim):
        raise ValidationError(f"upstream gradient shape {g.shape} does not match network output")
    grads = [None] * len(net.layers)
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        if tape.masks[k] is not None:
            g = np.where(tape.masks[k], g, 0.0)
        grads[k] = (g.T @ tape.inputs[k], g.sum(axis=0))
        if k:
            g = g @ layer.weight
    return grads


@dataclass
class OptimizerState:
    kind: str = "lars"
    base_lr: float = 1.0
    momentum: float = 0.9
    weight_decay: float = 1e-6
    trust_coefficient: float = 1e-3
    momentum_buffers: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("lars", "sgd_momentum"):
            raise ValidationError(f"unknown optimizer {self.kind!r}")
        if not 0 <= self.momentum < 1:
            raise ValidationError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValidationError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.kind == "lars" and not self.trust_coefficient > 0:
            raise ValidationError(f"trust_coefficient must be > 0, got {self.trust_coefficient}")


def lars_local_lr(w, g, weight_decay, trust_coefficient):
    g = g + weight_decay * w
    return trust_coefficient * np.linalg.norm(w) / (np.linalg.norm(g) + 1e-12), g


def lars_update(state: OptimizerState, params, grads, lr_t: float, is_bias=None) -> None:
    """In-place LARS step. Biases get plain momentum SGD without decay or trust ratio."""
    _ensure_buffers(state, params)
    if is_bias is None:
        is_bias = [p.ndim == 1 for p in params]
    for p, g, buf, bias in zip(params, grads, state.momentum_buffers, is_bias):
        if bias:
            step = lr_t * g
        else:
            local_lr, g = lars_local_lr(p, g, state.weight_decay, state.trust_coefficient)
            step = local_lr * lr_t * g
        buf *= state.momentum
        buf += step
        p -= buf


def sgd_update(state: OptimizerState, params, grads, lr_t: float, is_bias=None) -> None:
    _ensure_buffers(state, params)
    if is_bias is None:
        is_bias = [p.ndim == 1 for p in params]
    for p, g, buf, bias in zip(params, grads, state.momentum_buffers, is_bias):
        if not bias:
            g = g + state.weight_decay * p
        buf *= state.momentum
        buf += g
        p -= lr_t * buf


def _ensure_buffers(state, params):
    if not state.momentum_buffers:
        state.momentum_buffers = [np.zeros_like(p) for p in params]
    elif len(state.momentum_buffers) != len(params):
        raise ValidationError("optimizer state does not match parameter list")


def optimizer_step(state: OptimizerState, net: DenseNet, grads, lr_t: float) -> None:
    params = net.parameters()
    flat = [g for pair in grads for g in pair]
    if state.kind == "lars":
        lars_update(state, params, flat, lr_t)
    else:
        sgd_update(state, params, flat, lr_t)
    net.version += 1


def lr_schedule(t: int, warmup: int, total: int, lr_max: float) -> float:
    """Linear warmup to ``lr_max`` then cosine decay to zero at ``total``."""
    if warmup > 0 and t < warmup:
        return lr_max * t / warmup
    if total <= warmup:
        return lr_max
    frac = min(max(t - warmup, 0), total - warmup) / (total - warmup)
    return lr_max * 0.5 * (1.0 + math.cos(math.pi * frac))
