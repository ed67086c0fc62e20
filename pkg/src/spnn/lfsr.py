"""LFSR bit streams and connection masks.

A column of a connection mask is the output of a stochastic number
generator (SNG): an LFSR walks through its states and a comparator emits
1 whenever the state is below a threshold.  Every mask is therefore fully
described by the LFSR configuration, the threshold and one seed per
column, which is what the compressed model format stores.

Sparsity conventions: ``sparsity`` (p) is the fraction of removed
connections and ``keep_density`` (d) is ``1 - p``.  The comparator keeps a
connection when ``state < floor(d * 2**width)``.
"""

from __future__ import annotations

import enum
import functools
import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import kernels

__all__ = [
    "LfsrMode",
    "LfsrConfig",
    "SngConfig",
    "MaskMatrix",
    "TAPS",
    "default_taps",
    "taps_to_mask",
    "mask_to_taps",
    "lfsr_next",
    "lfsr_orbit",
    "sng_stream",
    "make_sng",
    "column_seed",
    "generate_mask",
    "mask_column_popcount",
]

MIN_WIDTH = 3
MAX_WIDTH = 24


class LfsrMode(str, enum.Enum):
    MAXIMAL = "maximal"
    DEBRUIJN = "debruijn"


def _load_taps():
    raw = json.loads(resources.files(__package__).joinpath("lfsr_taps.json").read_text())
    return {int(k): tuple(v) for k, v in raw["taps"].items()}


TAPS: dict[int, tuple[int, ...]] = _load_taps()


def default_taps(width: int) -> tuple[int, ...]:
    try:
        return TAPS[width]
    except KeyError:
        raise ValueError(f"no shipped taps for width {width} (supported {MIN_WIDTH}..{MAX_WIDTH})") from None


def taps_to_mask(taps) -> int:
    return sum(1 << (t - 1) for t in set(taps))


def mask_to_taps(tapmask: int) -> tuple[int, ...]:
    return tuple(sorted((i + 1 for i in range(32) if tapmask >> i & 1), reverse=True))


@functools.lru_cache(maxsize=None)
def _is_maximal(width: int, tapmask: int) -> bool:
    if TAPS.get(width) is not None and taps_to_mask(TAPS[width]) == tapmask:
        return True
    period = (1 << width) - 1
    return kernels.orbit_length(width, tapmask, 1, False, period) == period


@dataclass(frozen=True)
class LfsrConfig:
    """Fibonacci LFSR: shift left, feed back the XOR of the tapped bits into bit 1.

    ``taps`` are 1-indexed bit positions and must include ``width_bits``.
    Debruijn mode splices the all-zero state in front of state 1, giving a
    period of ``2**width_bits`` instead of ``2**width_bits - 1``.
    """

    width_bits: int
    taps: tuple[int, ...] = ()
    seed: int = 1
    mode: LfsrMode = LfsrMode.DEBRUIJN

    def __post_init__(self):
        if not MIN_WIDTH <= self.width_bits <= MAX_WIDTH:
            raise ValueError(f"width_bits must be in [{MIN_WIDTH}, {MAX_WIDTH}], got {self.width_bits}")
        taps = tuple(sorted(set(self.taps), reverse=True)) if self.taps else default_taps(self.width_bits)
        object.__setattr__(self, "taps", taps)
        object.__setattr__(self, "mode", LfsrMode(self.mode))
        if taps[0] != self.width_bits or taps[-1] < 1:
            raise ValueError(f"taps {taps} must lie in [1, {self.width_bits}] and include {self.width_bits}")
        if not _is_maximal(self.width_bits, self.tapmask):
            raise ValueError(f"taps {taps} are not maximal-period for width {self.width_bits}")
        if not 1 <= self.seed <= self.period_nonzero:
            raise ValueError(f"seed must be in [1, {self.period_nonzero}], got {self.seed}")

    @property
    def tapmask(self) -> int:
        return taps_to_mask(self.taps)

    @property
    def period_nonzero(self) -> int:
        return (1 << self.width_bits) - 1

    @property
    def period(self) -> int:
        return self.period_nonzero + (self.mode is LfsrMode.DEBRUIJN)

    @property
    def debruijn(self) -> bool:
        return self.mode is LfsrMode.DEBRUIJN

    def with_seed(self, seed: int) -> LfsrConfig:
        return LfsrConfig(self.width_bits, self.taps, seed, self.mode)


@dataclass(frozen=True)
class SngConfig:
    """LFSR plus comparator threshold ``T = floor(keep_density * 2**width)``.

    ``threshold`` may be given explicitly (model files store it); otherwise
    it is derived from ``keep_density``.
    """

    lfsr: LfsrConfig
    keep_density: float = field(compare=False)
    threshold: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.keep_density <= 1.0:
            raise ValueError(f"keep_density must be in [0, 1], got {self.keep_density}")
        full = 1 << self.lfsr.width_bits
        if self.threshold is None:
            # rounding guard: 1 - p is often a hair below an exact multiple of 2**-width
            object.__setattr__(self, "threshold", math.floor(round(self.keep_density * full, 9)))
        if not 0 <= self.threshold <= full:
            raise ValueError(f"threshold must be in [0, {full}], got {self.threshold}")

    @property
    def sparsity(self) -> float:
        return 1.0 - self.keep_density


def lfsr_next(state: int, cfg: LfsrConfig) -> int:
    if not 0 <= state <= cfg.period_nonzero:
        raise ValueError(f"state {state} out of range for width {cfg.width_bits}")
    if state == 0 and not cfg.debruijn:
        raise ValueError("zero state is invalid in maximal mode")
    return int(kernels.lfsr_next(state, cfg.width_bits, cfg.tapmask, cfg.debruijn))


def lfsr_orbit(cfg: LfsrConfig, length: int | None = None) -> np.ndarray:
    """States visited from ``cfg.seed``; one full period by default."""
    length = cfg.period if length is None else length
    return kernels.lfsr_states(cfg.width_bits, cfg.tapmask, cfg.seed, cfg.debruijn, length)


def sng_stream(cfg: SngConfig, length: int, seed: int | None = None) -> np.ndarray:
    """Comparator output ``state < threshold`` for ``length`` steps (uint8 0/1)."""
    if length < 1:
        raise ValueError("length must be >= 1")
    lf = cfg.lfsr
    seed = lf.seed if seed is None else seed
    if not 1 <= seed <= lf.period_nonzero:
        raise ValueError(f"seed must be in [1, {lf.period_nonzero}], got {seed}")
    return kernels.sng_bits(lf.width_bits, lf.tapmask, seed, lf.debruijn, cfg.threshold, length)


def make_sng(n_inputs: int, sparsity: float, mode=LfsrMode.DEBRUIJN, width: int | None = None,
             seed: int = 1) -> SngConfig:
    """SNG sized for a layer with ``n_inputs`` inputs (width = ceil(log2 n), at least 3)."""
    if not 0.0 <= sparsity <= 1.0:
        raise ValueError(f"sparsity must be in [0, 1], got {sparsity}")
    if width is None:
        width = max(MIN_WIDTH, math.ceil(math.log2(max(n_inputs, 1))))
    return SngConfig(LfsrConfig(width, (), seed, mode), keep_density=1.0 - sparsity)


def column_seed(base_seed: int, j: int, width: int) -> int:
    period = (1 << width) - 1
    return (base_seed - 1 + j) % period + 1


@dataclass(frozen=True, eq=False)
class MaskMatrix:
    rows: int
    cols: int
    bits: np.ndarray
    column_seeds: tuple[int, ...]
    sng: SngConfig
    base_seed: int = 1
    wrapped: bool = field(default=False)

    def __eq__(self, other):
        if not isinstance(other, MaskMatrix):
            return NotImplemented
        return (self.rows, self.cols, self.column_seeds, self.sng, self.base_seed) == (
            other.rows, other.cols, other.column_seeds, other.sng, other.base_seed
        ) and np.array_equal(self.bits, other.bits)

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def popcounts(self) -> np.ndarray:
        return self.bits.sum(axis=0, dtype=np.int64)

    @classmethod
    def regenerate(cls, n: int, sng: SngConfig, column_seeds) -> MaskMatrix:
        """Rebuild the mask from its seeds alone."""
        seeds = tuple(int(s) for s in column_seeds)
        bits = np.empty((n, len(seeds)), dtype=np.uint8)
        for j, s in enumerate(seeds):
            bits[:, j] = sng_stream(sng, n, seed=s)
        base = seeds[0] if seeds else 1
        return cls(n, len(seeds), bits, seeds, sng, base, n > sng.lfsr.period)


def generate_mask(n: int, m: int, sng: SngConfig, base_seed: int = 1) -> MaskMatrix:
    """n x m mask; column j is the SNG stream seeded with ``column_seed(base_seed, j)``.

    In maximal mode a column longer than the period wraps around and the
    result is flagged with ``wrapped=True``.
    """
    if n < 1 or m < 1:
        raise ValueError(f"mask shape must be positive, got {n}x{m}")
    lf = sng.lfsr
    if lf.debruijn and n > lf.period:
        raise ValueError(f"width {lf.width_bits} too small for {n} inputs in debruijn mode")
    if not 1 <= base_seed <= lf.period_nonzero:
        raise ValueError(f"base_seed must be in [1, {lf.period_nonzero}], got {base_seed}")
    seeds = [column_seed(base_seed, j, lf.width_bits) for j in range(m)]
    mask = MaskMatrix.regenerate(n, sng, seeds)
    return MaskMatrix(n, m, mask.bits, mask.column_seeds, sng, base_seed, n > lf.period)


def mask_column_popcount(mask: MaskMatrix, j: int) -> int:
    if not 0 <= j < mask.cols:
        raise IndexError(f"column {j} out of range for {mask.cols} columns")
    return int(mask.bits[:, j].sum())
