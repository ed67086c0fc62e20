"""Deterministic binary/ternary weight quantization."""

import enum

import numpy as np

TERNARY_THRESHOLD = 1.0 / 3.0


class QuantMode(str, enum.Enum):
    NONE = "none"
    BINARY = "binary"
    TERNARY = "ternary"


class Phase(str, enum.Enum):
    TRAIN = "train"
    TEST_QUANTIZED = "test_quantized"
    TEST_REAL = "test_real"


# storage word width per mode, in bits
WEIGHT_WIDTH = {QuantMode.NONE: 32, QuantMode.BINARY: 1, QuantMode.TERNARY: 2}


def weight_scale(n: int, m: int, quant) -> float:
    """Magnitude represented by a +1 weight code.

    Quantized layers store weights normalized to [-1, 1] and scale the
    codes by the Glorot limit ``sqrt(6 / (n + m))`` so that quantized and
    real-valued weights live on the same scale.  Unquantized layers use 1.
    """
    if QuantMode(quant) is QuantMode.NONE:
        return 1.0
    return float(np.sqrt(6.0 / (n + m)))


def binarize(w: np.ndarray) -> np.ndarray:
    """+1 where ``w >= 0``, else -1."""
    w = np.asarray(w)
    return np.where(w >= 0, 1, -1).astype(w.dtype if w.dtype.kind == "f" else np.float32)


def ternarize(w: np.ndarray) -> np.ndarray:
    """+1 where ``w >= 1/3``, -1 where ``w <= -1/3``, 0 in between."""
    w = np.asarray(w)
    dtype = w.dtype if w.dtype.kind == "f" else np.float32
    # compare in float64 so that a float32 1/3 sits on the right side of the boundary
    w64 = w.astype(np.float64)
    out = np.zeros(w.shape, dtype=dtype)
    out[w64 >= TERNARY_THRESHOLD] = 1
    out[w64 <= -TERNARY_THRESHOLD] = -1
    return out


def quantize(w: np.ndarray, mode) -> np.ndarray:
    mode = QuantMode(mode)
    if mode is QuantMode.BINARY:
        return binarize(w)
    if mode is QuantMode.TERNARY:
        return ternarize(w)
    return w


def effective_weights(layer, phase=Phase.TRAIN) -> np.ndarray:
    """Weights a layer actually multiplies with in ``phase``; always zero where masked.

    Quantized layers use quantized weights for training and for the
    quantized test run, and their real-valued weights for the real test run,
    in both cases multiplied by ``weight_scale``.
    """
    phase = Phase(phase)
    quant = QuantMode(layer.quant)
    w = layer.W
    if quant is not QuantMode.NONE:
        if phase is not Phase.TEST_REAL:
            w = quantize(w, quant)
        w = w * w.dtype.type(weight_scale(*layer.W.shape, quant))
    if layer.mask_bits is None:
        return w.copy() if w is layer.W else w
    return w * layer.mask_bits


def clip_weights(layer) -> None:
    if QuantMode(layer.quant) is not QuantMode.NONE:
        np.clip(layer.W, -1.0, 1.0, out=layer.W)
