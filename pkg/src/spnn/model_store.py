"""Kept-weights-only layer storage and the binary model file.

Only the weights at mask positions equal to 1 are stored, column by
column in ascending row order (the order in which the SNG emits its 1s).
Mask positions themselves are never stored: they are regenerated from the
LFSR configuration, the comparator threshold and the column seeds.

File layout (little-endian)::

    "SPNN"  u16 version  u16 layer_count  u32 epochs  u32 config_hash
    per layer:
        u32 n  u32 m  u8 quant  u8 lfsr_width  u8 lfsr_mode  u8 weight_bits  u8 flags
        u32 taps_mask  u32 base_seed  u32 threshold
        u32 column_seed[m]  u32 kept_count[m]
        packed weights, each column padded to a whole byte
        f32 bias[m]  f32 gamma[m] beta[m] running_mean[m] running_var[m]
        u32 crc32(layer record)
    u32 crc32(everything above)

Weight packing: 32 bits as f32; 1 bit as sign (1 = +1, 0 = -1); 2 bits as
00 = 0, 01 = +1, 11 = -1.  Bits are filled LSB first.  Weights of
binary/ternary layers are stored normalized; their scale
``sqrt(6 / (n + m))`` follows from the shape and is not written.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .layers import BN_EPSILON, BatchNormParams, SparseAffineLayer
from .lfsr import LfsrConfig, LfsrMode, MaskMatrix, SngConfig, generate_mask, make_sng, mask_to_taps
from .quantize import WEIGHT_WIDTH, QuantMode, quantize, weight_scale
from .train import Network

MAGIC = b"SPNN"
VERSION = 1
FLAG_BATCHNORM = 0x01

_QUANT_CODE = {QuantMode.NONE: 0, QuantMode.BINARY: 1, QuantMode.TERNARY: 2}
_MODE_CODE = {LfsrMode.MAXIMAL: 0, LfsrMode.DEBRUIJN: 1}
_HEADER = struct.Struct("<4sHHII")
_LAYER_HEAD = struct.Struct("<IIBBBBBIII")


class ModelFormatError(ValueError):
    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (at byte offset {offset})")
        self.offset = offset


class CorruptModelError(ModelFormatError):
    pass


@dataclass(eq=False)
class CompressedLayer:
    n: int
    m: int
    sng: SngConfig
    column_seeds: tuple[int, ...]
    quant: QuantMode
    weight_width_bits: int
    columns: list[np.ndarray]
    bias: np.ndarray
    batchnorm: BatchNormParams | None = None
    base_seed: int = field(default=1)

    @property
    def scale(self) -> float:
        """Multiplier applied to the accumulated sum (see ``weight_scale``)."""
        return weight_scale(self.n, self.m, self.quant)

    def kept_counts(self) -> np.ndarray:
        return np.array([len(c) for c in self.columns], dtype=np.int64)

    def __eq__(self, other):
        if not isinstance(other, CompressedLayer):
            return NotImplemented
        same = (self.n, self.m, self.sng, self.column_seeds, self.quant, self.weight_width_bits,
                self.base_seed) == (other.n, other.m, other.sng, other.column_seeds, other.quant,
                                    other.weight_width_bits, other.base_seed)
        same = same and len(self.columns) == len(other.columns)
        same = same and all(np.array_equal(a, b) for a, b in zip(self.columns, other.columns))
        same = same and np.array_equal(self.bias, other.bias)
        if (self.batchnorm is None) != (other.batchnorm is None):
            return False
        if self.batchnorm is not None:
            for name in ("gamma", "beta", "running_mean", "running_var"):
                same = same and np.array_equal(getattr(self.batchnorm, name), getattr(other.batchnorm, name))
        return bool(same)

    def mask(self) -> MaskMatrix:
        return MaskMatrix.regenerate(self.n, self.sng, self.column_seeds)


def _check_width(quant: QuantMode, width: int) -> None:
    if width == 32:
        return
    if WEIGHT_WIDTH[quant] != width:
        raise ValueError(f"{width}-bit storage is not valid for quant mode {quant.value}")


def compress_layer(W, mask: MaskMatrix, quant=QuantMode.NONE, weight_width_bits=None,
                   bias=None, batchnorm=None) -> CompressedLayer:
    """Keep the mask-selected entries of ``quantize(W)`` column by column.

    ``weight_width_bits=32`` on a quantized layer stores the real-valued
    weights instead (for real-valued test runs of quantized training).
    """
    W = np.asarray(W, dtype=np.float32)
    quant = QuantMode(quant)
    if W.shape != mask.shape:
        raise ValueError(f"weights {W.shape} and mask {mask.shape} differ in shape")
    width = WEIGHT_WIDTH[quant] if weight_width_bits is None else int(weight_width_bits)
    _check_width(quant, width)
    values = W if width == 32 else quantize(W, quant)
    keep = mask.bits.astype(bool)
    columns = [values[keep[:, j], j].astype(np.float32) for j in range(mask.cols)]
    bias = np.zeros(mask.cols, dtype=np.float32) if bias is None else np.asarray(bias, dtype=np.float32)
    sng = SngConfig(mask.sng.lfsr.with_seed(mask.base_seed), mask.sng.keep_density, mask.sng.threshold)
    return CompressedLayer(mask.rows, mask.cols, sng, mask.column_seeds, quant, width, columns,
                           bias.copy(), batchnorm, mask.base_seed)


def decompress_layer(c: CompressedLayer) -> np.ndarray:
    """Scatter the kept weights back to the regenerated mask positions."""
    mask = c.mask()
    counts = mask.popcounts()
    W = np.zeros((c.n, c.m), dtype=np.float32)
    for j, col in enumerate(c.columns):
        if len(col) != counts[j]:
            raise CorruptModelError(
                f"column {j} stores {len(col)} weights but its SNG stream has {counts[j]} ones"
            )
        W[mask.bits[:, j].astype(bool), j] = col
    return W


def per_neuron_bits(c: CompressedLayer) -> np.ndarray:
    return c.kept_counts() * c.weight_width_bits


def memory_footprint_bits(c: CompressedLayer) -> int:
    return int(per_neuron_bits(c).sum())


def _pack_column(col: np.ndarray, width: int) -> bytes:
    if width == 32:
        return col.astype("<f4").tobytes()
    if width == 1:
        return np.packbits(col > 0, bitorder="little").tobytes()
    codes = np.zeros(len(col), dtype=np.uint8)
    codes[col > 0] = 0b01
    codes[col < 0] = 0b11
    padded = np.zeros(-(-len(col) // 4) * 4, dtype=np.uint8)
    padded[: len(col)] = codes
    quads = padded.reshape(-1, 4)
    return (quads[:, 0] | quads[:, 1] << 2 | quads[:, 2] << 4 | quads[:, 3] << 6).astype(np.uint8).tobytes()


def _column_bytes(count: int, width: int) -> int:
    return 4 * count if width == 32 else -(-count * width // 8)


def _unpack_column(raw: bytes, count: int, width: int) -> np.ndarray:
    if width == 32:
        return np.frombuffer(raw, dtype="<f4", count=count).astype(np.float32)
    if width == 1:
        bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")[:count]
        return np.where(bits == 1, 1.0, -1.0).astype(np.float32)
    b = np.frombuffer(raw, dtype=np.uint8)
    codes = np.stack([b & 3, b >> 2 & 3, b >> 4 & 3, b >> 6 & 3], axis=1).reshape(-1)[:count]
    if np.any(codes == 0b10):
        raise CorruptModelError("invalid ternary code 10")
    out = np.zeros(count, dtype=np.float32)
    out[codes == 0b01] = 1.0
    out[codes == 0b11] = -1.0
    return out


@dataclass(eq=False)
class ModelFile:
    layers: list[CompressedLayer]
    epochs: int = 0
    config_hash: int = 0
    version: int = VERSION

    def __eq__(self, other):
        if not isinstance(other, ModelFile):
            return NotImplemented
        return (self.epochs, self.config_hash, self.version) == (other.epochs, other.config_hash, other.version) \
            and len(self.layers) == len(other.layers) and all(a == b for a, b in zip(self.layers, other.layers))


def _layer_record(c: CompressedLayer) -> bytes:
    lf = c.sng.lfsr
    flags = FLAG_BATCHNORM if c.batchnorm is not None else 0
    parts = [
        _LAYER_HEAD.pack(c.n, c.m, _QUANT_CODE[c.quant], lf.width_bits, _MODE_CODE[lf.mode],
                         c.weight_width_bits, flags, lf.tapmask, c.base_seed, c.sng.threshold),
        np.asarray(c.column_seeds, dtype="<u4").tobytes(),
        c.kept_counts().astype("<u4").tobytes(),
    ]
    parts += [_pack_column(col, c.weight_width_bits) for col in c.columns]
    parts.append(np.asarray(c.bias, dtype="<f4").tobytes())
    bn = c.batchnorm
    if bn is None:
        stats = [np.ones(c.m), np.zeros(c.m), np.zeros(c.m), np.ones(c.m)]
    else:
        stats = [bn.gamma, bn.beta, bn.running_mean, bn.running_var]
    parts += [np.asarray(s, dtype="<f4").tobytes() for s in stats]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def serialize(model: ModelFile) -> bytes:
    if not model.layers:
        raise ModelFormatError("a model needs at least one layer")
    body = _HEADER.pack(MAGIC, model.version, len(model.layers), model.epochs, model.config_hash)
    body += b"".join(_layer_record(c) for c in model.layers)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes, offset=0):
        self.buf = buf
        self.pos = offset

    def take(self, size: int, what: str) -> bytes:
        if size < 0 or self.pos + size > len(self.buf):
            raise ModelFormatError(f"truncated file while reading {what}", self.pos)
        out = self.buf[self.pos:self.pos + size]
        self.pos += size
        return out

    def unpack(self, st: struct.Struct, what: str):
        return st.unpack(self.take(st.size, what))

    def array(self, dtype: str, count: int, what: str) -> np.ndarray:
        size = np.dtype(dtype).itemsize * count
        return np.frombuffer(self.take(size, what), dtype=dtype).copy()


def _read_layer(r: _Reader, index: int) -> CompressedLayer:
    start = r.pos
    (n, m, q, width, mode, wbits, flags, tapmask, base_seed, threshold) = r.unpack(_LAYER_HEAD, f"layer {index} header")
    try:
        quant = {v: k for k, v in _QUANT_CODE.items()}[q]
        lmode = {v: k for k, v in _MODE_CODE.items()}[mode]
        lfsr = LfsrConfig(width, mask_to_taps(tapmask), base_seed, lmode)
        sng = SngConfig(lfsr, threshold / float(1 << width), threshold)
        if wbits not in (1, 2, 32):
            raise ValueError(f"unsupported weight width {wbits}")
        _check_width(quant, wbits)
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(f"layer {index}: invalid configuration ({exc})", start) from None
    seeds = tuple(int(s) for s in r.array("<u4", m, f"layer {index} seeds"))
    counts = r.array("<u4", m, f"layer {index} kept counts")
    if np.any(counts > n):
        raise ModelFormatError(f"layer {index}: kept count exceeds {n} inputs", r.pos)
    columns = [_unpack_column(r.take(_column_bytes(int(k), wbits), f"layer {index} column {j}"), int(k), wbits)
               for j, k in enumerate(counts)]
    bias = r.array("<f4", m, f"layer {index} bias")
    gamma, beta, mean, var = (r.array("<f4", m, f"layer {index} batch-norm") for _ in range(4))
    body_end = r.pos
    (crc,) = r.unpack(struct.Struct("<I"), f"layer {index} checksum")
    if crc != zlib.crc32(r.buf[start:body_end]):
        raise CorruptModelError(f"layer {index} checksum mismatch", body_end)
    bn = BatchNormParams(gamma, beta, mean, var, BN_EPSILON) if flags & FLAG_BATCHNORM else None
    return CompressedLayer(n, m, sng, seeds, quant, wbits, columns, bias, bn, base_seed)


def deserialize(buf: bytes) -> ModelFile:
    buf = bytes(buf)
    if len(buf) < _HEADER.size + 4:
        raise ModelFormatError("file too short", len(buf))
    magic, version, count, epochs, chash = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise ModelFormatError(f"unsupported format version {version}", 4)
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if crc != zlib.crc32(buf[:-4]):
        raise CorruptModelError("file checksum mismatch", len(buf) - 4)
    if count < 1:
        raise ModelFormatError("model has no layers", 6)
    r = _Reader(buf[:-4], _HEADER.size)
    layers = [_read_layer(r, i) for i in range(count)]
    if r.pos != len(r.buf):
        raise ModelFormatError("trailing bytes after last layer", r.pos)
    return ModelFile(layers, epochs, chash, version)


def write_model(path, model: ModelFile) -> None:
    """Atomic write: temp file in the target directory, then rename."""
    path = Path(path)
    data = serialize(model)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_model(path) -> ModelFile:
    return deserialize(Path(path).read_bytes())


def export_network(network, weights="auto", epochs=0, config_hash=0) -> ModelFile:
    """Compress every layer of a trained network.

    ``weights``: ``"real"`` stores 32-bit weights, ``"quantized"`` stores
    1/2-bit weights for binary/ternary networks, ``"auto"`` picks quantized
    storage whenever the network is quantized.
    """
    layers = []
    for layer, bn in zip(network.layers, network.norms):
        mask = layer.mask
        if mask is None:
            mask = generate_mask(layer.n, layer.m, make_sng(layer.n, 0.0), 1)
        if weights == "real" or layer.quant is QuantMode.NONE:
            width = 32
        elif weights in ("quantized", "auto"):
            width = None
        else:
            raise ValueError(f"unknown weight export mode {weights!r}")
        layers.append(compress_layer(layer.W, mask, layer.quant, width, layer.b, bn))
    return ModelFile(layers, epochs, config_hash)


def load_network(model: ModelFile):
    """Rebuild an inference network from a model file alone."""
    layers, norms = [], []
    for c in model.layers:
        W = decompress_layer(c)
        layers.append(SparseAffineLayer(W, c.bias.copy(), c.mask(), c.quant))
        norms.append(c.batchnorm)
    return Network(layers, norms)
