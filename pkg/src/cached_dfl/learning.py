"""Desk-scale differentiable models, proximal local SGD, and plateau LR scheduling.

Two architectures are supported: multinomial logistic regression ("softmax")
and a one-hidden-layer ReLU perceptron ("mlp"). Parameters live in one flat
float64 vector with a fixed layout: layer-major, row-major within a layer,
biases appended per layer. The local objective is mean cross-entropy plus a
proximal pull (rho/2)*||x - anchor||^2 toward the epoch-start model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError


@dataclass(frozen=True)
class Arch:
    """Architecture descriptor; `hidden` is used by the mlp kind only."""

    kind: str
    input_dim: int
    classes: int
    hidden: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("softmax", "mlp"):
            raise InvalidConfigError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1 or self.classes < 2:
            raise InvalidConfigError(
                f"bad dimensions: input_dim={self.input_dim}, classes={self.classes}"
            )
        if self.kind == "mlp" and self.hidden < 1:
            raise InvalidConfigError(f"mlp needs hidden >= 1, got {self.hidden}")

    @property
    def n_params(self) -> int:
        d, c, h = self.input_dim, self.classes, self.hidden
        if self.kind == "softmax":
            return d * c + c
        return d * h + h + h * c + c


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Flat parameter vector plus its architecture; treat `weights` as immutable."""

    arch: Arch
    weights: np.ndarray

    def __post_init__(self) -> None:
        if self.weights.shape != (self.arch.n_params,):
            raise InvalidConfigError(
                f"weight vector has length {self.weights.shape}, "
                f"arch requires {self.arch.n_params}"
            )

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, ModelParams)
            and self.arch == other.arch
            and np.array_equal(self.weights, other.weights)
        )


def init_params(arch: Arch, rng: np.random.Generator) -> ModelParams:
    """Zero init for softmax; scaled-normal hidden layers for the mlp."""
    w = np.zeros(arch.n_params)
    if arch.kind == "mlp":
        d, h, c = arch.input_dim, arch.hidden, arch.classes
        w[: d * h] = rng.normal(0.0, 1.0 / np.sqrt(d), size=d * h)
        w[d * h + h : d * h + h + h * c] = rng.normal(0.0, 1.0 / np.sqrt(h), size=h * c)
    return ModelParams(arch, w)


def _views(arch: Arch, w: np.ndarray):
    d, c = arch.input_dim, arch.classes
    if arch.kind == "softmax":
        return w[: d * c].reshape(d, c), w[d * c :]
    h = arch.hidden
    i = 0
    w1 = w[i : i + d * h].reshape(d, h)
    i += d * h
    b1 = w[i : i + h]
    i += h
    w2 = w[i : i + h * c].reshape(h, c)
    i += h * c
    return w1, b1, w2, w[i:]


def _logits(arch: Arch, w: np.ndarray, x: np.ndarray) -> np.ndarray:
    if arch.kind == "softmax":
        wm, b = _views(arch, w)
        return x @ wm + b
    w1, b1, w2, b2 = _views(arch, w)
    return np.maximum(x @ w1 + b1, 0.0) @ w2 + b2


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss(
    params: ModelParams,
    x: np.ndarray,
    y: np.ndarray,
    anchor: ModelParams | None = None,
    rho: float = 0.0,
) -> float:
    """Mean cross-entropy over the batch, plus the proximal term when rho > 0."""
    z = _logits(params.arch, params.weights, x)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    value = float((lse - z[np.arange(len(y)), y]).mean())
    if rho:
        diff = params.weights - anchor.weights
        value += 0.5 * rho * float(diff @ diff)
    return value


def _grad_flat(
    arch: Arch,
    w: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    anchor_w: np.ndarray | None,
    rho: float,
) -> np.ndarray:
    batch = len(x)
    if arch.kind == "softmax":
        wm, _ = _views(arch, w)
        p = _softmax(x @ wm + w[arch.input_dim * arch.classes :])
        p[np.arange(batch), y] -= 1.0
        p /= batch
        g = np.concatenate([(x.T @ p).ravel(), p.sum(axis=0)])
    else:
        w1, b1, w2, b2 = _views(arch, w)
        a = x @ w1 + b1
        h = np.maximum(a, 0.0)
        p = _softmax(h @ w2 + b2)
        p[np.arange(batch), y] -= 1.0
        p /= batch
        da = (p @ w2.T) * (a > 0.0)
        g = np.concatenate(
            [(x.T @ da).ravel(), da.sum(axis=0), (h.T @ p).ravel(), p.sum(axis=0)]
        )
    if rho:
        g += rho * (w - anchor_w)
    return g


def grad(
    params: ModelParams,
    x: np.ndarray,
    y: np.ndarray,
    anchor: ModelParams | None = None,
    rho: float = 0.0,
) -> np.ndarray:
    """Gradient of :func:`loss` with respect to the flat parameter vector."""
    if len(x) == 0:
        raise ValueError("gradient of an empty batch is undefined")
    anchor_w = None
    if rho:
        if anchor is None:
            raise ValueError("rho > 0 requires an anchor model")
        if anchor.arch != params.arch:
            raise ValueError(f"anchor arch {anchor.arch} != params arch {params.arch}")
        anchor_w = anchor.weights
    return _grad_flat(params.arch, params.weights, x, y, anchor_w, rho)


def evaluate(params: ModelParams, x: np.ndarray, y: np.ndarray) -> float:
    """Fraction of argmax-correct predictions; ties resolve to the smallest class."""
    if len(x) == 0:
        raise ValueError("cannot evaluate on an empty test set")
    preds = np.argmax(_logits(params.arch, params.weights, x), axis=1)
    return float(np.mean(preds == y))


@dataclass(frozen=True)
class LocalLearnerConfig:
    """One agent's local optimisation settings for a single epoch."""

    steps: int
    eta: float
    rho: float = 0.0
    batch_size: int = 64

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise InvalidConfigError(f"steps must be >= 0, got {self.steps}")
        if self.eta <= 0:
            raise InvalidConfigError(f"eta must be positive, got {self.eta}")
        if self.rho < 0:
            raise InvalidConfigError(f"rho must be >= 0, got {self.rho}")
        if self.batch_size < 1:
            raise InvalidConfigError(f"batch_size must be >= 1, got {self.batch_size}")


def local_update(
    params: ModelParams,
    x: np.ndarray,
    y: np.ndarray,
    cfg: LocalLearnerConfig,
    rng: np.random.Generator,
) -> ModelParams:
    """Run `cfg.steps` proximal SGD steps anchored at `params`.

    Batches are sampled uniformly with replacement; the anchor of the proximal
    term stays fixed at the epoch-start parameters.
    """
    n = len(x)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if cfg.steps == 0:
        return params
    arch = params.arch
    anchor_w = params.weights
    w = params.weights.copy()
    for _ in range(cfg.steps):
        idx = rng.integers(0, n, size=cfg.batch_size)
        w -= cfg.eta * _grad_flat(arch, w, x[idx], y[idx], anchor_w, cfg.rho)
    return ModelParams(arch, w)


@dataclass
class PlateauScheduler:
    """Multiply the learning rate by `factor` after `patience` epochs without improvement."""

    lr: float
    factor: float = 0.1
    patience: int = 10
    min_lr: float = 1e-4
    best: float = float("-inf")
    bad_epochs: int = 0

    def step(self, metric: float) -> float:
        """Record one epoch's metric (higher is better) and return the lr to use next."""
        if metric > self.best:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.lr


def reduce_on_plateau(
    history: list[float],
    lr: float,
    factor: float = 0.1,
    patience: int = 10,
    min_lr: float = 1e-4,
) -> float:
    """Learning rate after replaying a metric history through a fresh scheduler."""
    sched = PlateauScheduler(lr=lr, factor=factor, patience=patience, min_lr=min_lr)
    for metric in history:
        lr = sched.step(metric)
    return lr
