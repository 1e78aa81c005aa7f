"""Point-wise MLP scorer: forward pass, exact backprop and mini-batch SGD.

The network maps a 10-d descriptor to two logits (salience, uniqueness).
Hidden layers use ReLU, outputs a sigmoid. The loss is binary cross-entropy
summed over the two heads and averaged over points.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..errors import DimensionMismatchError, LioSelectError, TrainingDivergedError
from .descriptors import DESCRIPTOR_DIM, Descriptors

log = logging.getLogger(__name__)

MODEL_VERSION = 1
DEFAULT_DIMS = (DESCRIPTOR_DIM, 32, 32, 2)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softplus(z):
    return np.logaddexp(0.0, z)


@dataclass(frozen=True, eq=False)
class FeatureScores:
    salience: np.ndarray
    uniqueness: np.ndarray
    alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise LioSelectError(f"alpha must be in [0, 1], got {self.alpha}")
        if len(self.salience) != len(self.uniqueness):
            raise LioSelectError("salience and uniqueness lengths differ")

    @property
    def combined(self):
        return self.alpha * self.salience + (1.0 - self.alpha) * self.uniqueness

    def __len__(self):
        return len(self.salience)


@dataclass(eq=False)
class ScorerModel:
    """Weights are (out, in) matrices; ``layers`` is a list of (W, b)."""

    layers: List[Tuple[np.ndarray, np.ndarray]]
    alpha: float = 0.5
    version: int = MODEL_VERSION

    def __post_init__(self):
        if not self.layers:
            raise LioSelectError("a scorer needs at least one layer")
        fixed = []
        prev = None
        for W, b in self.layers:
            W = np.asarray(W, dtype=float)
            b = np.asarray(b, dtype=float).reshape(-1)
            if W.ndim != 2 or b.shape[0] != W.shape[0]:
                raise LioSelectError("layer weight/bias shapes disagree")
            if prev is not None and W.shape[1] != prev:
                raise LioSelectError(f"layer input {W.shape[1]} does not match previous output {prev}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise LioSelectError("non-finite scorer weights")
            prev = W.shape[0]
            fixed.append((W, b))
        if prev != 2:
            raise LioSelectError(f"scorer output must have 2 heads, got {prev}")
        self.layers = fixed

    @property
    def dims(self):
        return (self.layers[0][0].shape[1],) + tuple(W.shape[0] for W, _ in self.layers)

    @property
    def input_dim(self):
        return self.layers[0][0].shape[1]

    def copy(self):
        return ScorerModel([(W.copy(), b.copy()) for W, b in self.layers], self.alpha, self.version)

    def flat(self):
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in self.layers])

    def with_flat(self, theta):
        theta = np.asarray(theta, dtype=float)
        out, pos = [], 0
        for W, b in self.layers:
            w = theta[pos:pos + W.size].reshape(W.shape)
            pos += W.size
            bb = theta[pos:pos + b.size].copy()
            pos += b.size
            out.append((w.copy(), bb))
        return ScorerModel(out, self.alpha, self.version)


def init_model(dims: Sequence[int] = DEFAULT_DIMS, seed: int = 0, alpha: float = 0.5) -> ScorerModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        layers.append((W, b))
    return ScorerModel(layers, alpha)


def _as_matrix(model, descriptors):
    X = descriptors.values if isinstance(descriptors, Descriptors) else descriptors
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != model.input_dim:
        raise DimensionMismatchError(f"descriptor dim {X.shape[1]} != model input dim {model.input_dim}")
    return X


def scorer_logits(model: ScorerModel, descriptors):
    h = _as_matrix(model, descriptors)
    last = len(model.layers) - 1
    for i, (W, b) in enumerate(model.layers):
        h = h @ W.T + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def scorer_forward(model: ScorerModel, descriptors, alpha: Optional[float] = None) -> FeatureScores:
    s = sigmoid(scorer_logits(model, descriptors))
    return FeatureScores(s[:, 0], s[:, 1], model.alpha if alpha is None else alpha)


def bce_loss(logits, y_sal, y_uniq):
    Y = np.stack([y_sal, y_uniq], axis=1).astype(float)
    return float(np.mean(np.sum(_softplus(logits) - Y * logits, axis=1)))


def scorer_gradient(model: ScorerModel, X, y_sal, y_uniq):
    """Loss and exact gradient as a list of (dW, db) matching ``model.layers``."""
    X = _as_matrix(model, X)
    n = X.shape[0]
    if n == 0:
        raise LioSelectError("scorer_gradient needs a non-empty batch")
    Y = np.stack([np.asarray(y_sal, dtype=float), np.asarray(y_uniq, dtype=float)], axis=1)
    acts = [X]
    pre = []
    h = X
    last = len(model.layers) - 1
    for i, (W, b) in enumerate(model.layers):
        z = h @ W.T + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
        acts.append(h)
    logits = acts[-1]
    loss = float(np.mean(np.sum(_softplus(logits) - Y * logits, axis=1)))
    delta = (sigmoid(logits) - Y) / n
    grads = [None] * len(model.layers)
    for i in range(last, -1, -1):
        W, _ = model.layers[i]
        grads[i] = (delta.T @ acts[i], delta.sum(axis=0))
        if i > 0:
            delta = (delta @ W) * (pre[i - 1] > 0.0)
    return loss, grads


@dataclass(frozen=True, eq=False)
class LabeledScan:
    descriptors: np.ndarray
    salient: np.ndarray
    unique: np.ndarray
    sequence_id: str = ""
    scan_index: int = 0
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        d = np.asarray(self.descriptors)
        if not (len(d) == len(self.salient) == len(self.unique)):
            raise LioSelectError("LabeledScan arrays must have equal length")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 0.05
    batch_size: int = 256
    seed: int = 0
    hidden: Tuple[int, ...] = (32, 32)
    alpha: float = 0.5
    standardize: bool = True


@dataclass
class TrainResult:
    model: ScorerModel
    history: List[float] = field(default_factory=list)


def stack_dataset(dataset: Sequence[LabeledScan]):
    Xs, ys, yu = [], [], []
    for s in dataset:
        X = np.asarray(s.descriptors.values if isinstance(s.descriptors, Descriptors) else s.descriptors,
                       dtype=float)
        keep = np.ones(len(X), dtype=bool) if s.valid is None else np.asarray(s.valid, dtype=bool)
        Xs.append(X[keep])
        ys.append(np.asarray(s.salient, dtype=float)[keep])
        yu.append(np.asarray(s.unique, dtype=float)[keep])
    return np.concatenate(Xs), np.concatenate(ys), np.concatenate(yu)


def _fold_standardization(model, mean, std):
    W, b = model.layers[0]
    W2 = W / std
    b2 = b - W2 @ mean
    return ScorerModel([(W2, b2)] + [(W.copy(), b.copy()) for W, b in model.layers[1:]],
                       model.alpha, model.version)


def scorer_train(dataset: Sequence[LabeledScan], config: TrainConfig = TrainConfig()) -> TrainResult:
    """Plain mini-batch SGD with a fixed learning rate.

    With ``standardize`` the inputs are z-scored during training and the
    affine map is folded into the first layer of the returned model. The
    loss history holds the full-dataset loss after every epoch.
    """
    if not dataset:
        raise LioSelectError("scorer_train needs a non-empty dataset")
    X, ys, yu = stack_dataset(dataset)
    if len(X) == 0:
        raise LioSelectError("dataset has no valid points")
    dims = (X.shape[1],) + tuple(config.hidden) + (2,)
    model = init_model(dims, config.seed, config.alpha)
    shuffle = np.random.default_rng((config.seed, 1))
    if config.standardize:
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        Xt = (X - mean) / std
    else:
        Xt = X
    history: List[float] = []
    n = len(Xt)
    bs = max(1, int(config.batch_size))
    lr = float(config.learning_rate)
    for epoch in range(1, config.epochs + 1):
        perm = shuffle.permutation(n)
        for s in range(0, n, bs):
            idx = perm[s:s + bs]
            _, grads = scorer_gradient(model, Xt[idx], ys[idx], yu[idx])
            if lr != 0.0:
                model = _sgd_step(model, grads, lr, epoch)
        loss = bce_loss(scorer_logits(model, Xt), ys, yu)
        if not np.isfinite(loss):
            raise TrainingDivergedError(epoch, loss)
        history.append(loss)
        log.debug("epoch %d loss %.6f", epoch, loss)
    if config.standardize:
        model = _fold_standardization(model, mean, std)
    return TrainResult(model, history)


def _sgd_step(model, grads, lr, epoch):
    layers = []
    for (W, b), (gW, gb) in zip(model.layers, grads):
        with np.errstate(over="ignore", invalid="ignore"):
            W2 = W - lr * gW
            b2 = b - lr * gb
        if not (np.all(np.isfinite(W2)) and np.all(np.isfinite(b2))):
            raise TrainingDivergedError(epoch, float("nan"))
        layers.append((W2, b2))
    return ScorerModel(layers, model.alpha, model.version)
