"""Mini-batch SGD for masked networks with the squared hinge loss."""

from __future__ import annotations

import json
import logging
import time
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from .layers import (
    BatchNormParams,
    SparseAffineLayer,
    batchnorm_backward,
    batchnorm_forward,
    relu_backward,
    relu_forward,
)
from .lfsr import LfsrMode, column_seed, generate_mask, make_sng
from .quantize import Phase, QuantMode

log = logging.getLogger(__name__)


class DivergenceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    shape: tuple[int, ...] = (784, 100, 100, 10)
    sparsity: tuple[float, ...] | float = 0.0
    quant: QuantMode = QuantMode.NONE
    learning_rate: float = 0.01
    lr_decay: float = 0.98
    batch_size: int = 100
    epochs: int = 50
    rng_seed: int = 0
    mask_seed: int = 1
    lfsr_mode: LfsrMode = LfsrMode.DEBRUIJN
    dense: bool = False

    def __post_init__(self):
        shape = tuple(int(w) for w in self.shape)
        if len(shape) < 2 or min(shape) < 1:
            raise ValueError(f"invalid network shape {self.shape}")
        sp = self.sparsity
        sp = (float(sp),) * (len(shape) - 1) if np.isscalar(sp) else tuple(float(s) for s in sp)
        if len(sp) != len(shape) - 1:
            raise ValueError(f"need {len(shape) - 1} sparsity values, got {len(sp)}")
        if any(not 0.0 <= s < 1.0 for s in sp):
            raise ValueError(f"sparsity must be in [0, 1), got {sp}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch norm)")
        if self.learning_rate < 0 or not 0 < self.lr_decay <= 1:
            raise ValueError("learning_rate must be >= 0 and lr_decay in (0, 1]")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "sparsity", sp)
        object.__setattr__(self, "quant", QuantMode(self.quant))
        object.__setattr__(self, "lfsr_mode", LfsrMode(self.lfsr_mode))

    def to_json(self) -> str:
        d = asdict(self)
        d["quant"] = self.quant.value
        d["lfsr_mode"] = self.lfsr_mode.value
        return json.dumps(d, sort_keys=True)

    def config_hash(self) -> int:
        return zlib.crc32(self.to_json().encode())


@dataclass
class Network:
    """Hidden layers run affine -> batch norm -> ReLU; the last layer is affine only."""

    layers: list[SparseAffineLayer]
    norms: list[BatchNormParams | None]

    @classmethod
    def build(cls, cfg: TrainConfig, dtype=np.float32) -> Network:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.rng_seed, 0])))
        layers, norms = [], []
        seed_offset = 0
        n_layers = len(cfg.shape) - 1
        for k, (n, m) in enumerate(zip(cfg.shape[:-1], cfg.shape[1:])):
            mask = None
            if not cfg.dense:
                sng = make_sng(n, cfg.sparsity[k], cfg.lfsr_mode)
                base = column_seed(cfg.mask_seed, seed_offset, sng.lfsr.width_bits)
                mask = generate_mask(n, m, sng, base)
            seed_offset += m
            layers.append(SparseAffineLayer.initialize(n, m, rng, mask, cfg.quant, dtype))
            norms.append(BatchNormParams.initialize(m, dtype) if k < n_layers - 1 else None)
        return cls(layers, norms)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.layers[0].n,) + tuple(layer.m for layer in self.layers)

    @property
    def quant(self) -> QuantMode:
        return self.layers[0].quant

    def forward(self, x, phase=Phase.TRAIN):
        """Returns scores and the per-layer caches (train phase uses batch statistics)."""
        phase = Phase(phase)
        bn_phase = "train" if phase is Phase.TRAIN else "infer"
        caches = []
        h = x
        for layer, bn in zip(self.layers, self.norms):
            h, c_aff = layer.forward(h, phase)
            c_bn = c_relu = None
            if bn is not None:
                h, c_bn = batchnorm_forward(bn, h, bn_phase)
                h, c_relu = relu_forward(h)
            caches.append((c_aff, c_bn, c_relu))
        return h, caches

    def pre_activations(self, x, layer_index, phase=Phase.TEST_REAL):
        """Input to and affine output of layer ``layer_index`` in inference mode."""
        h = x
        for k, (layer, bn) in enumerate(zip(self.layers, self.norms)):
            z, _ = layer.forward(h, phase)
            if k == layer_index:
                return h, z
            h, _ = batchnorm_forward(bn, z, "infer")
            h, _ = relu_forward(h)
        raise IndexError(f"layer {layer_index} out of range")

    def backward(self, caches, grad):
        grads = []
        for layer, bn, (c_aff, c_bn, c_relu) in zip(
            reversed(self.layers), reversed(self.norms), reversed(caches)
        ):
            g_bn = None
            if bn is not None:
                grad = relu_backward(c_relu, grad)
                grad, g_gamma, g_beta = batchnorm_backward(bn, c_bn, grad)
                g_bn = (g_gamma, g_beta)
            g_W, g_b, grad = layer.backward(c_aff, grad)
            grads.append((g_W, g_b, g_bn))
        return grads[::-1]

    def step(self, grads, lr) -> None:
        for layer, bn, (g_W, g_b, g_bn) in zip(self.layers, self.norms, grads):
            layer.apply_update(g_W, g_b, lr)
            if bn is not None:
                bn.apply_update(*g_bn, lr)

    def state_arrays(self) -> list[np.ndarray]:
        out = []
        for layer, bn in zip(self.layers, self.norms):
            out += [layer.W, layer.b]
            if bn is not None:
                out += [bn.gamma, bn.beta, bn.running_mean, bn.running_var]
        return out

    def snapshot(self) -> list[np.ndarray]:
        return [a.copy() for a in self.state_arrays()]

    def restore(self, snap) -> None:
        for dst, src in zip(self.state_arrays(), snap):
            dst[...] = src
        for layer, bn in zip(self.layers, self.norms):
            layer.version += 1
            if bn is not None:
                bn.version += 1

    def parameter_count(self, include_batchnorm=False) -> int:
        """Kept weights plus biases (plus gamma/beta/running stats if asked)."""
        total = sum(layer.kept_weights() + layer.m for layer in self.layers)
        if include_batchnorm:
            total += sum(4 * bn.gamma.size for bn in self.norms if bn is not None)
        return total


def nominal_parameter_count(shape, sparsity) -> int:
    """Parameter count as tabulated for sparse networks: expected kept weights
    ``(1 - p) * n * m`` summed over layers and rounded, plus all biases."""
    shape = tuple(shape)
    pairs = list(zip(shape[:-1], shape[1:]))
    sp = (sparsity,) * len(pairs) if np.isscalar(sparsity) else tuple(sparsity)
    weights = sum((1.0 - p) * n * m for (n, m), p in zip(pairs, sp))
    return int(round(weights)) + sum(shape[1:])


def squared_hinge_loss(scores, labels):
    """One-vs-all squared hinge: mean over the batch of sum_k max(0, 1 - t_k s_k)^2."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    batch, k = scores.shape
    if labels.shape != (batch,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {batch}")
    if batch and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must be in [0, {k})")
    t = -np.ones_like(scores)
    t[np.arange(batch), labels] = 1
    margin = np.maximum(0, 1 - t * scores)
    loss = float((margin * margin).sum(dtype=np.float64) / batch)
    grad = (-2 / batch) * t * margin
    return loss, grad.astype(scores.dtype)


def epoch_order(cfg: TrainConfig, epoch: int, count: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.rng_seed, 1, epoch])))
    return rng.permutation(count)


def train_epoch(network: Network, x, y, cfg: TrainConfig, epoch: int = 0, lr: float | None = None) -> float:
    """One pass of mini-batch SGD; returns the mean training loss.

    A trailing partial batch smaller than 2 samples is dropped.
    """
    lr = cfg.learning_rate if lr is None else lr
    order = epoch_order(cfg, epoch, len(x))
    total, batches = 0.0, 0
    for start in range(0, len(order), cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        if len(idx) < 2:
            continue
        scores, caches = network.forward(x[idx], Phase.TRAIN)
        loss, grad = squared_hinge_loss(scores, y[idx])
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {batches}")
        grads = network.backward(caches, grad)
        network.step(grads, lr)
        total += loss
        batches += 1
    return total / max(batches, 1)


def predict(network: Network, x, phase=Phase.TEST_REAL, batch=1000) -> np.ndarray:
    out = [np.argmax(network.forward(x[i:i + batch], phase)[0], axis=1) for i in range(0, len(x), batch)]
    return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


def evaluate(network: Network, x, y, phase=Phase.TEST_REAL) -> float:
    """Misclassification rate in percent, batch norm in inference mode."""
    if len(x) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    phase = Phase(phase)
    if phase is Phase.TRAIN:
        raise ValueError("evaluate needs a test phase")
    errors = int((predict(network, x, phase) != np.asarray(y)).sum())
    return 100.0 * errors / len(x)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_error: float
    test_error: float
    lr: float
    seconds: float
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = {k: v for k, v in asdict(self).items() if k != "extra"}
        d.update(self.extra)
        return json.dumps(d, sort_keys=True)


@dataclass
class TrainResult:
    network: Network
    history: list[EpochRecord]
    best_epoch: int
    best_val_error: float
    test_error: float


def train(cfg: TrainConfig, split, phase=Phase.TEST_REAL, on_epoch=None, extra_eval=None) -> TrainResult:
    """Full run with model selection on the validation error.

    The returned network holds the parameters of the best validation
    epoch; ``test_error`` is measured at that epoch.  ``extra_eval`` maps
    names to ``(x, y)`` pairs evaluated every epoch (e.g. the official
    MNIST test file).
    """
    network = Network.build(cfg)
    history: list[EpochRecord] = []
    best = (float("inf"), -1, float("nan"))
    best_snap = network.snapshot()
    lr = cfg.learning_rate
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        loss = train_epoch(network, split.train.x, split.train.y, cfg, epoch, lr)
        val = evaluate(network, split.validation.x, split.validation.y, phase)
        test = evaluate(network, split.test.x, split.test.y, phase)
        extra = {f"{name}_error": evaluate(network, ex, ey, phase) for name, (ex, ey) in (extra_eval or {}).items()}
        rec = EpochRecord(epoch, loss, val, test, lr, time.perf_counter() - t0, extra)
        history.append(rec)
        log.info("epoch %d loss %.5f val %.2f%% test %.2f%% (%.1fs)", epoch, loss, val, test, rec.seconds)
        if on_epoch is not None:
            on_epoch(rec)
        if val < best[0]:
            best = (val, epoch, test)
            best_snap = network.snapshot()
        lr *= cfg.lr_decay
    if history:
        network.restore(best_snap)
        log.info("best epoch %d: val %.2f%% test %.2f%%", best[1], best[0], best[2])
    return TrainResult(network, history, best[1], best[0], best[2])
