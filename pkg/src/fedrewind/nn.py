"""Self-contained differentiable models: softmax regression and a one
hidden layer ReLU MLP, trained with plain mini-batch SGD.

Everything operates on a flat float64 parameter vector so models can be
averaged, exchanged between simulated nodes, and compared bit-for-bit.
All functions are pure: they never mutate their inputs and are fully
determined by explicit arguments (including seeds).
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .seeding import MASK64, generator


@dataclass(frozen=True)
class ArchSpec:
    """Network shape. hidden_dim=0 means plain softmax regression."""

    input_dim: int
    hidden_dim: int = 0
    num_classes: int = 2
    activation: str = "relu"

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be a positive integer")
        if self.hidden_dim < 0:
            raise ValueError("hidden_dim must be non-negative")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation: {self.activation!r}")

    @property
    def parameter_count(self) -> int:
        d, h, c = self.input_dim, self.hidden_dim, self.num_classes
        if h == 0:
            return d * c + c
        return d * h + h + h * c + c


@dataclass(frozen=True)
class ModelParams:
    """Architecture plus a flat, read-only float64 parameter vector."""

    arch: ArchSpec
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64).ravel()
        if theta.shape != (self.arch.parameter_count,):
            raise ValueError(
                f"theta has length {theta.size}, "
                f"arch requires {self.arch.parameter_count}"
            )
        if not np.isfinite(theta).all():
            raise ValueError("theta contains non-finite values")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)


@dataclass(frozen=True)
class Batch:
    """A block of labelled samples; doubles as a full-dataset view."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64).ravel()
        if features.ndim != 2:
            raise ValueError("features must be a 2-d matrix")
        if features.shape[0] != labels.shape[0]:
            raise ValueError("feature rows and labels must have equal count")
        if labels.size and labels.min() < 0:
            raise ValueError("labels must be non-negative")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    shuffle_seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be a positive integer")


# ---------------------------------------------------------------------------
# parameter vector layout: [W1, b1, W2, b2] for the MLP, [W, b] for softmax
# regression, each matrix flattened row-major.


def _unpack(arch: ArchSpec, theta: np.ndarray):
    d, h, c = arch.input_dim, arch.hidden_dim, arch.num_classes
    if h == 0:
        w = theta[: d * c].reshape(d, c)
        b = theta[d * c :]
        return w, b
    o1 = d * h
    o2 = o1 + h
    o3 = o2 + h * c
    w1 = theta[:o1].reshape(d, h)
    b1 = theta[o1:o2]
    w2 = theta[o2:o3].reshape(h, c)
    b2 = theta[o3:]
    return w1, b1, w2, b2


def init_model(arch: ArchSpec, seed: int) -> ModelParams:
    """Scaled-uniform weights in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases."""
    rng = generator(seed)
    d, h, c = arch.input_dim, arch.hidden_dim, arch.num_classes
    parts = []
    if h == 0:
        bound = 1.0 / np.sqrt(d)
        parts.append(rng.uniform(-bound, bound, size=d * c))
        parts.append(np.zeros(c))
    else:
        bound1 = 1.0 / np.sqrt(d)
        parts.append(rng.uniform(-bound1, bound1, size=d * h))
        parts.append(np.zeros(h))
        bound2 = 1.0 / np.sqrt(h)
        parts.append(rng.uniform(-bound2, bound2, size=h * c))
        parts.append(np.zeros(c))
    return ModelParams(arch, np.concatenate(parts))


def _check_features(arch: ArchSpec, features: np.ndarray) -> None:
    if features.shape[1] != arch.input_dim:
        raise ValueError(
            f"feature dimension {features.shape[1]} does not match "
            f"arch input_dim {arch.input_dim}"
        )


def _forward_arrays(arch: ArchSpec, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    if arch.hidden_dim == 0:
        w, b = _unpack(arch, theta)
        return x @ w + b
    w1, b1, w2, b2 = _unpack(arch, theta)
    hidden = np.maximum(x @ w1 + b1, 0.0)
    return hidden @ w2 + b2


def forward(model: ModelParams, batch: Batch) -> np.ndarray:
    """Logits matrix (batch_size x num_classes)."""
    _check_features(model.arch, batch.features)
    return _forward_arrays(model.arch, model.theta, batch.features)


def _loss_and_grad_arrays(arch, theta, x, y):
    n = x.shape[0]
    if arch.hidden_dim == 0:
        w, b = _unpack(arch, theta)
        logits = x @ w + b
    else:
        w1, b1, w2, b2 = _unpack(arch, theta)
        z1 = x @ w1 + b1
        hidden = np.maximum(z1, 0.0)
        logits = hidden @ w2 + b2

    # mean cross-entropy via log-sum-exp, stable for large logits
    zmax = logits.max(axis=1, keepdims=True)
    expz = np.exp(logits - zmax)
    denom = expz.sum(axis=1)
    lse = np.log(denom) + zmax[:, 0]
    rows = np.arange(n)
    loss = float(np.mean(lse - logits[rows, y]))

    dlogits = expz / denom[:, None]
    dlogits[rows, y] -= 1.0
    dlogits /= n

    if arch.hidden_dim == 0:
        gw = x.T @ dlogits
        gb = dlogits.sum(axis=0)
        grad = np.concatenate([gw.ravel(), gb])
    else:
        gw2 = hidden.T @ dlogits
        gb2 = dlogits.sum(axis=0)
        dhidden = dlogits @ w2.T
        dhidden[z1 <= 0.0] = 0.0
        gw1 = x.T @ dhidden
        gb1 = dhidden.sum(axis=0)
        grad = np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2])
    return loss, grad


def loss_and_grad(model: ModelParams, batch: Batch) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its exact gradient w.r.t. theta."""
    if len(batch) == 0:
        raise ValueError("cannot compute loss on an empty batch")
    _check_features(model.arch, batch.features)
    if batch.labels.max() >= model.arch.num_classes:
        raise ValueError("label out of range for num_classes")
    return _loss_and_grad_arrays(
        model.arch, model.theta, batch.features, batch.labels
    )


def train(
    model: ModelParams,
    data: Batch,
    epochs: int,
    cfg: TrainConfig,
    start_epoch: int = 0,
    on_step: Callable[[], None] | None = None,
) -> ModelParams:
    """Run `epochs` of mini-batch SGD and return the updated parameters.

    The shuffle order for global epoch k is drawn from a counter-based
    generator keyed by shuffle_seed XOR k, where k = start_epoch + local
    epoch index. Training e1 epochs and then e2 more (passing
    start_epoch=e1) is therefore bit-identical to training e1+e2 epochs
    in one call. Exactly epochs * ceil(len(data)/batch_size) SGD steps
    are executed; the input model is not modified.
    """
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    n = len(data)
    if epochs > 0 and n == 0:
        raise ValueError("cannot train on empty data")
    if epochs == 0:
        return ModelParams(model.arch, model.theta)
    _check_features(model.arch, data.features)
    if data.labels.max() >= model.arch.num_classes:
        raise ValueError("label out of range for num_classes")

    arch = model.arch
    theta = model.theta.copy()
    x, y = data.features, data.labels
    bs = cfg.batch_size
    lr = cfg.learning_rate
    for k in range(epochs):
        epoch_key = (int(cfg.shuffle_seed) ^ (start_epoch + k)) & MASK64
        order = generator(epoch_key).permutation(n)
        for lo in range(0, n, bs):
            sel = order[lo : lo + bs]
            _, grad = _loss_and_grad_arrays(arch, theta, x[sel], y[sel])
            theta -= lr * grad
            if on_step is not None:
                on_step()
    return ModelParams(arch, theta)


def average_params(models: Sequence[ModelParams]) -> ModelParams:
    """Unweighted element-wise mean of parameter vectors (FedAvg aggregate)."""
    if len(models) == 0:
        raise ValueError("cannot average an empty sequence of models")
    arch = models[0].arch
    for m in models[1:]:
        if m.arch != arch:
            raise ValueError("cannot average models with different architectures")
    stacked = np.stack([m.theta for m in models])
    return ModelParams(arch, stacked.mean(axis=0))


def accuracy(model: ModelParams, data: Batch) -> float:
    """Fraction of samples whose argmax logit matches the label.

    Ties resolve to the lowest class index.
    """
    if len(data) == 0:
        raise ValueError("cannot evaluate accuracy on an empty set")
    logits = forward(model, data)
    pred = logits.argmax(axis=1)
    return float(np.mean(pred == data.labels))


def with_shuffle_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    """Copy of cfg on a different shuffle stream."""
    return replace(cfg, shuffle_seed=int(seed) & MASK64)
