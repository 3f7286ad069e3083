"""Minimal numpy engine for the two detector architectures.

Only what the detectors need: dense, batch-norm and GELU layers, MSE and
BCE-with-logits losses, analytic backward pass and momentum SGD.  All arrays
are float64 so finite-difference checks are meaningful.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import (
    ArchitectureError,
    DegenerateBatchError,
    InvalidCacheError,
    InvalidLabelError,
    ShapeError,
)
from .rng import INIT, make_rng

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
AUTOENCODER_HIDDEN = 32
MLP_HIDDEN = 256

_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int

    def __post_init__(self):
        if self.kind not in ("dense", "batchnorm", "gelu", "identity"):
            raise ArchitectureError(f"unknown layer kind {self.kind!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ArchitectureError("layer dimensions must be positive")
        if self.kind != "dense" and self.in_dim != self.out_dim:
            raise ArchitectureError(f"{self.kind} layer must preserve its width")


@dataclass
class Dense:
    W: np.ndarray  # (in_dim, out_dim)
    b: np.ndarray

    @property
    def spec(self):
        return LayerSpec("dense", *self.W.shape)

    def learnables(self):
        return [self.W, self.b]

    def state(self):
        return [self.W, self.b]


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM

    @property
    def spec(self):
        return LayerSpec("batchnorm", self.gamma.size, self.gamma.size)

    def learnables(self):
        return [self.gamma, self.beta]

    def state(self):
        return [self.gamma, self.beta, self.running_mean, self.running_var]


@dataclass
class GELU:
    dim: int

    @property
    def spec(self):
        return LayerSpec("gelu", self.dim, self.dim)

    def learnables(self):
        return []

    def state(self):
        return []


@dataclass
class ParameterVector:
    """Flat parameter (or gradient) values tagged with the model layout."""

    values: np.ndarray
    layout: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    def __len__(self):
        return self.values.size

    def copy(self):
        return ParameterVector(self.values.copy(), self.layout)


@dataclass
class ModelParams:
    arch: str
    layers: list

    @property
    def input_dim(self) -> int:
        return self.layers[0].spec.in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].spec.out_dim

    @property
    def specs(self) -> list[LayerSpec]:
        return [layer.spec for layer in self.layers]

    @property
    def layout(self) -> str:
        dims = [self.input_dim] + [l.spec.out_dim for l in self.layers if isinstance(l, Dense)]
        return f"{self.arch}:" + "-".join(map(str, dims))

    def learnables(self) -> list[np.ndarray]:
        return [a for layer in self.layers for a in layer.learnables()]

    def state(self) -> list[np.ndarray]:
        return [a for layer in self.layers for a in layer.state()]

    @property
    def n_learnable(self) -> int:
        return sum(a.size for a in self.learnables())

    @property
    def n_state(self) -> int:
        return sum(a.size for a in self.state())

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)

    def flatten(self, running: bool = True) -> ParameterVector:
        """Concatenate parameters in canonical layer order.

        With ``running=True`` batch-norm running statistics are included; this
        is the vector that gets aggregated.
        """
        arrays = self.state() if running else self.learnables()
        tag = self.layout if running else self.layout + "/learnable"
        return ParameterVector(np.concatenate([a.ravel() for a in arrays]), tag)

    def load(self, vector: ParameterVector) -> "ModelParams":
        """Overwrite all parameters (running statistics included) in place."""
        if vector.layout != self.layout:
            raise ShapeError(f"layout {vector.layout!r} does not match model {self.layout!r}")
        values = vector.values
        if values.size != self.n_state:
            raise ShapeError(f"expected {self.n_state} values, got {values.size}")
        offset = 0
        for a in self.state():
            a[...] = values[offset:offset + a.size].reshape(a.shape)
            offset += a.size
        for layer in self.layers:
            if isinstance(layer, BatchNorm):
                # aggregated or forged vectors can carry negative variances
                np.maximum(layer.running_var, 0.0, out=layer.running_var)
        return self

    def unflatten(self, vector: ParameterVector) -> "ModelParams":
        return self.copy().load(vector)


def _dense(rng, in_dim, out_dim):
    bound = 1.0 / math.sqrt(in_dim)
    W = rng.uniform(-bound, bound, size=(in_dim, out_dim))
    b = rng.uniform(-bound, bound, size=out_dim)
    return Dense(W, b)


def _batchnorm(dim):
    return BatchNorm(np.ones(dim), np.zeros(dim), np.zeros(dim), np.ones(dim))


def _check_dim(input_dim, hidden):
    if int(input_dim) != input_dim or input_dim < 1:
        raise ArchitectureError(f"input_dim must be a positive integer, got {input_dim!r}")
    if hidden < 1:
        raise ArchitectureError(f"hidden size must be positive, got {hidden!r}")


def build_autoencoder(input_dim: int, seed: int = 0, hidden: int = AUTOENCODER_HIDDEN) -> ModelParams:
    """dense(d->32), batchnorm, gelu, dense(32->d), gelu."""
    _check_dim(input_dim, hidden)
    rng = make_rng(seed, INIT)
    layers = [
        _dense(rng, input_dim, hidden),
        _batchnorm(hidden),
        GELU(hidden),
        _dense(rng, hidden, input_dim),
        GELU(input_dim),
    ]
    return ModelParams("autoencoder", layers)


def build_mlp(input_dim: int, seed: int = 0, hidden: int = MLP_HIDDEN) -> ModelParams:
    """dense(d->256), batchnorm, gelu, dense(256->1); the output is a logit."""
    _check_dim(input_dim, hidden)
    rng = make_rng(seed, INIT)
    layers = [
        _dense(rng, input_dim, hidden),
        _batchnorm(hidden),
        GELU(hidden),
        _dense(rng, hidden, 1),
    ]
    return ModelParams("mlp", layers)


def build_model(arch: str, input_dim: int, seed: int = 0, hidden: int | None = None) -> ModelParams:
    if arch == "autoencoder":
        return build_autoencoder(input_dim, seed, hidden or AUTOENCODER_HIDDEN)
    if arch == "mlp":
        return build_mlp(input_dim, seed, hidden or MLP_HIDDEN)
    raise ArchitectureError(f"unknown architecture {arch!r}")


def gelu(x):
    return x * 0.5 * (1.0 + erf(x / _SQRT2))


def _gelu_grad(x):
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)


def forward(model: ModelParams, batch, mode: str = "eval"):
    """Run the network on ``batch`` (rows are samples).

    Returns ``(output, cache)``.  Train mode normalises with batch statistics
    and updates the running statistics in place; eval mode is pure.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError(f"batch of shape {x.shape} does not fit input_dim {model.input_dim}")
    if mode == "train" and x.shape[0] < 2:
        raise DegenerateBatchError("train-mode forward needs at least 2 rows")

    caches = []
    for layer in model.layers:
        if isinstance(layer, Dense):
            caches.append(x)
            x = x @ layer.W + layer.b
        elif isinstance(layer, BatchNorm):
            if mode == "train":
                mu = x.mean(axis=0)
                var = x.var(axis=0)
                inv_std = 1.0 / np.sqrt(var + layer.eps)
                xhat = (x - mu) * inv_std
                n = x.shape[0]
                m = layer.momentum
                layer.running_mean *= 1.0 - m
                layer.running_mean += m * mu
                layer.running_var *= 1.0 - m
                layer.running_var += m * var * n / (n - 1)
                caches.append((xhat, inv_std))
            else:
                xhat = (x - layer.running_mean) / np.sqrt(layer.running_var + layer.eps)
                caches.append(None)
            x = layer.gamma * xhat + layer.beta
        else:
            caches.append(x)
            x = gelu(x)
    return x, {"mode": mode, "layers": caches, "output": x}


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")


def loss_mse(output, target) -> float:
    output = np.asarray(output, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_same_shape(output, target)
    return float(np.mean((output - target) ** 2))


def _check_labels(labels):
    if not np.all((labels == 0) | (labels == 1)):
        raise InvalidLabelError("labels must be 0 or 1")


def loss_bce_logits(logits, labels) -> float:
    """Mean binary cross-entropy on raw logits, in log-sum-exp form."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    _check_same_shape(z, y)
    _check_labels(y)
    return float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def loss_value(kind: str, output, target) -> float:
    if kind == "mse":
        return loss_mse(output, target)
    if kind == "bce":
        return loss_bce_logits(output, target)
    raise ValueError(f"unknown loss {kind!r}")


def backward(model: ModelParams, cache, loss_kind: str, target, loss_scale: float = 1.0) -> ParameterVector:
    """Gradient of ``loss_scale * loss`` w.r.t. every learnable parameter.

    ``cache`` must come from a train-mode :func:`forward` on the same batch.
    The result is laid out like ``model.flatten(running=False)``.
    """
    if not isinstance(cache, dict) or cache.get("mode") != "train":
        raise InvalidCacheError("backward needs the cache of a train-mode forward")
    out = cache["output"]
    target = np.asarray(target, dtype=np.float64)
    if target.shape != out.shape and target.size == out.size:
        target = target.reshape(out.shape)
    _check_same_shape(out, target)
    if loss_kind == "mse":
        grad = 2.0 * (out - target) / out.size
    elif loss_kind == "bce":
        _check_labels(target)
        grad = (sigmoid(out) - target) / out.size
    else:
        raise ValueError(f"unknown loss {loss_kind!r}")
    grad = grad * loss_scale

    grads = []
    for layer, c in zip(reversed(model.layers), reversed(cache["layers"])):
        if isinstance(layer, Dense):
            grads.append(grad.sum(axis=0))
            grads.append((c.T @ grad).ravel())
            grad = grad @ layer.W.T
        elif isinstance(layer, BatchNorm):
            xhat, inv_std = c
            n = xhat.shape[0]
            dgamma = (grad * xhat).sum(axis=0)
            dbeta = grad.sum(axis=0)
            grads.append(dbeta)
            grads.append(dgamma)
            dxhat = grad * layer.gamma
            grad = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            grad = grad * _gelu_grad(c)
    return ParameterVector(np.concatenate(grads[::-1]), model.layout + "/learnable")


@dataclass
class OptimizerState:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    velocity: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")

    def reset(self):
        self.velocity = None


def sgd_step(model: ModelParams, gradient: ParameterVector, state: OptimizerState):
    """Heavy-ball momentum step, in place: v <- mu*v + g; p <- p - lr*v."""
    g = gradient.values if isinstance(gradient, ParameterVector) else np.asarray(gradient, dtype=np.float64)
    if g.shape != (model.n_learnable,):
        raise ShapeError(f"gradient has {g.size} entries, model has {model.n_learnable} learnables")
    if state.velocity is None:
        state.velocity = np.zeros_like(g)
    state.velocity *= state.momentum
    state.velocity += g
    offset = 0
    for a in model.learnables():
        a -= state.learning_rate * state.velocity[offset:offset + a.size].reshape(a.shape)
        offset += a.size
    return model, state


def train_epoch(model, state, X, target, loss_kind, batch_size, rng) -> float:
    """One pass of shuffled minibatch SGD; returns the mean batch loss.

    A trailing batch with a single row is skipped since batch statistics
    are undefined for it.
    """
    n = X.shape[0]
    order = rng.permutation(n)
    losses = []
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if idx.size < 2:
            continue
        out, cache = forward(model, X[idx], "train")
        losses.append(loss_value(loss_kind, out, target[idx]))
        sgd_step(model, backward(model, cache, loss_kind, target[idx]), state)
    return float(np.mean(losses)) if losses else float("nan")


def reconstruction_errors(model: ModelParams, X) -> np.ndarray:
    """Per-sample reconstruction MSE in eval mode."""
    out, _ = forward(model, X, "eval")
    return np.mean((out - np.asarray(X, dtype=np.float64)) ** 2, axis=1)


def logits(model: ModelParams, X) -> np.ndarray:
    out, _ = forward(model, X, "eval")
    return out[:, 0]
