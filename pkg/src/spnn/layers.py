"""Forward/backward passes for masked affine layers, ReLU and batch norm."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lfsr import MaskMatrix
from .quantize import Phase, QuantMode, clip_weights, effective_weights, weight_scale
from .tensor import ShapeError, hadamard, matmul

BN_MOMENTUM = 0.9
BN_EPSILON = 1e-5


class StaleCacheError(RuntimeError):
    pass


@dataclass
class LayerCache:
    x: np.ndarray
    w_eff: np.ndarray
    owner_id: int
    version: int


class SparseAffineLayer:
    """``y = x @ (quantize(W) * M) + b`` for a batch ``x`` of shape (batch, n).

    ``mask=None`` gives a plain dense layer.  Gradients w.r.t. ``W`` are
    masked, so weights at removed connections never move from their
    initial values.

    For binary/ternary layers ``W`` holds normalized weights in [-1, 1];
    the forward pass uses ``scale * quantize(W)``.  Updates on ``W`` are
    ``lr / scale**3`` times its gradient, i.e. ``lr / scale**2`` times the
    gradient of the effective weights (the usual BinaryConnect scaling).
    """

    def __init__(self, W, b=None, mask: MaskMatrix | None = None, quant=QuantMode.NONE):
        self.W = np.ascontiguousarray(W)
        if self.W.ndim != 2:
            raise ShapeError("W must be 2-D")
        n, m = self.W.shape
        self.b = np.zeros(m, dtype=self.W.dtype) if b is None else np.ascontiguousarray(b, dtype=self.W.dtype)
        if self.b.shape != (m,):
            raise ShapeError(f"bias shape {self.b.shape} does not match {m} outputs")
        if mask is not None and mask.shape != (n, m):
            raise ShapeError(f"mask shape {mask.shape} does not match weights {(n, m)}")
        self.mask = mask
        self.mask_bits = None if mask is None else mask.bits.astype(self.W.dtype)
        self.quant = QuantMode(quant)
        self.version = 0

    @classmethod
    def initialize(cls, n, m, rng: np.random.Generator, mask=None, quant=QuantMode.NONE,
                   dtype=np.float32):
        limit = np.sqrt(6.0 / (n + m))
        W = rng.uniform(-limit, limit, size=(n, m)).astype(dtype)
        # quantized layers keep W in the clip range [-1, 1]; same draw, normalized
        W /= dtype(weight_scale(n, m, quant))
        return cls(W, np.zeros(m, dtype=dtype), mask, quant)

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def m(self) -> int:
        return self.W.shape[1]

    @property
    def scale(self) -> float:
        return weight_scale(self.n, self.m, self.quant)

    def kept_weights(self) -> int:
        return self.W.size if self.mask is None else int(self.mask.bits.sum())

    def effective(self, phase=Phase.TRAIN) -> np.ndarray:
        return effective_weights(self, phase)

    def forward(self, x, phase=Phase.TRAIN):
        return sparse_forward(self, x, phase)

    def backward(self, cache, grad_out):
        return sparse_backward(self, cache, grad_out)

    def apply_update(self, grad_W, grad_b, lr) -> None:
        self.W -= (lr / self.scale ** 3) * grad_W
        self.b -= lr * grad_b
        clip_weights(self)
        self.version += 1


def sparse_forward(layer: SparseAffineLayer, x, phase=Phase.TRAIN):
    if x.ndim != 2 or x.shape[1] != layer.n:
        raise ShapeError(f"input shape {x.shape} does not match {layer.n} layer inputs")
    w_eff = layer.effective(phase)
    y = matmul(x, w_eff) + layer.b
    return y, LayerCache(x, w_eff, id(layer), layer.version)


def sparse_backward(layer: SparseAffineLayer, cache: LayerCache, grad_out):
    if cache.owner_id != id(layer) or cache.version != layer.version:
        raise StaleCacheError("cache does not belong to the current layer parameters")
    if grad_out.shape != (cache.x.shape[0], layer.m):
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match forward output")
    grad_W = matmul(cache.x.T, grad_out)
    if layer.quant is not QuantMode.NONE:
        # straight-through: d(scale * q(W)) / dW taken as scale
        grad_W = grad_W * grad_W.dtype.type(layer.scale)
    if layer.mask_bits is not None:
        grad_W = hadamard(grad_W, layer.mask_bits)
    grad_b = grad_out.sum(axis=0)
    grad_x = matmul(grad_out, cache.w_eff.T)
    return grad_W, grad_b, grad_x


def relu_forward(x):
    return np.maximum(x, 0), x


def relu_backward(cache, grad_out):
    return np.where(cache > 0, grad_out, 0).astype(grad_out.dtype)


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = BN_EPSILON
    momentum: float = BN_MOMENTUM
    version: int = field(default=0)

    @classmethod
    def initialize(cls, features, dtype=np.float32):
        return cls(
            gamma=np.ones(features, dtype=dtype),
            beta=np.zeros(features, dtype=dtype),
            running_mean=np.zeros(features, dtype=dtype),
            running_var=np.ones(features, dtype=dtype),
        )

    def apply_update(self, grad_gamma, grad_beta, lr) -> None:
        self.gamma -= lr * grad_gamma
        self.beta -= lr * grad_beta
        self.version += 1


@dataclass
class BatchNormCache:
    x_hat: np.ndarray
    inv_std: np.ndarray
    version: int


def batchnorm_forward(params: BatchNormParams, x, phase="train"):
    """Train phase normalizes by batch statistics and updates the running
    averages in place; any other phase uses the running statistics."""
    if str(getattr(phase, "value", phase)) == "train":
        if x.shape[0] < 2:
            raise ValueError("batch norm needs a batch of at least 2 in the train phase")
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        mom = params.momentum
        params.running_mean[...] = mom * params.running_mean + (1 - mom) * mean
        params.running_var[...] = mom * params.running_var + (1 - mom) * var
    else:
        mean, var = params.running_mean, params.running_var
    inv_std = (1.0 / np.sqrt(var + params.epsilon)).astype(x.dtype)
    x_hat = (x - mean) * inv_std
    y = params.gamma * x_hat + params.beta
    return y, BatchNormCache(x_hat, inv_std, params.version)


def batchnorm_backward(params: BatchNormParams, cache: BatchNormCache, grad_out):
    if cache.version != params.version:
        raise StaleCacheError("batch-norm cache is stale")
    batch = grad_out.shape[0]
    grad_gamma = (grad_out * cache.x_hat).sum(axis=0)
    grad_beta = grad_out.sum(axis=0)
    g_hat = grad_out * params.gamma
    grad_x = (cache.inv_std / batch) * (
        batch * g_hat - g_hat.sum(axis=0) - cache.x_hat * (g_hat * cache.x_hat).sum(axis=0)
    )
    return grad_x, grad_gamma, grad_beta
