"""Cycle-level model of the serial neuron datapath.

One input arrives per clock cycle.  In the fully-connected datapath a
counter addresses the weight memory every cycle.  In the sparse datapath
the SNG that generated the mask drives the counter and accumulator enable:
on a 1 the counter advances and the product is accumulated, on a 0 both
hold their value.  Both datapaths take N cycles for N inputs.

Energy and area are not modelled; the activity counters (memory reads,
MACs, accumulator loads, memory bits) stand in for them.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .lfsr import SngConfig, sng_stream
from .model_store import CompressedLayer, decompress_layer


class DatapathMode(str, enum.Enum):
    FULLY_CONNECTED = "fully_connected"
    SPARSE = "sparse"


class DatapathError(RuntimeError):
    pass


@dataclass(frozen=True)
class QFormat:
    """Signed fixed point with ``frac_bits`` fractional bits (Q8.8 by default)."""

    int_bits: int = 8
    frac_bits: int = 8

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits

    def to_int(self, x) -> np.ndarray:
        lo = -(1 << (self.int_bits + self.frac_bits - 1))
        hi = (1 << (self.int_bits + self.frac_bits - 1)) - 1
        return np.clip(np.round(np.asarray(x, dtype=np.float64) * self.scale), lo, hi).astype(np.int64)


@dataclass
class ActivityReport:
    cycles: int = 0
    memory_reads: int = 0
    mac_operations: int = 0
    accumulator_loads: int = 0
    memory_bits: int = 0

    def __add__(self, other: ActivityReport) -> ActivityReport:
        return ActivityReport(*(a + b for a, b in zip(asdict(self).values(), asdict(other).values())))


@dataclass(frozen=True)
class TraceRecord:
    cycle: int
    sng_bit: int
    address: int
    weight: float
    input: float
    accumulator: float


@dataclass
class NeuronDatapath:
    """Register state of one neuron; ``run`` clocks it over an input stream."""

    weight_memory: np.ndarray
    mode: DatapathMode = DatapathMode.SPARSE
    sng: SngConfig | None = None
    seed: int | None = None
    weight_bits: int = 32
    counter: int = 0
    accumulator: float = 0.0

    def enable_stream(self, n: int) -> np.ndarray:
        if DatapathMode(self.mode) is DatapathMode.FULLY_CONNECTED:
            return np.ones(n, dtype=np.uint8)
        if self.sng is None:
            raise ValueError("sparse datapath needs an SNG configuration")
        return np.ascontiguousarray(sng_stream(self.sng, n, seed=self.seed))

    def run(self, inputs, trace=False):
        x = np.ascontiguousarray(inputs, dtype=np.float64)
        n = len(x)
        weights = np.ascontiguousarray(self.weight_memory, dtype=np.float64)
        enable = self.enable_stream(n)
        if DatapathMode(self.mode) is DatapathMode.FULLY_CONNECTED and len(weights) != n:
            raise DatapathError(f"fully-connected memory holds {len(weights)} weights for {n} inputs")
        try:
            acc, counter, addr_tr, acc_tr = kernels.mac_stream(x, enable, weights, trace)
        except IndexError as exc:
            raise DatapathError(str(exc)) from None
        if counter != len(weights):
            raise DatapathError(f"stream enabled {counter} reads but memory depth is {len(weights)}")
        self.counter, self.accumulator = int(counter), float(acc)
        report = ActivityReport(
            cycles=n,
            memory_reads=int(counter),
            mac_operations=int(counter),
            accumulator_loads=int(counter),
            memory_bits=len(weights) * self.weight_bits,
        )
        records = None
        if trace:
            records = []
            for t in range(n):
                on = int(enable[t])
                addr = int(addr_tr[t])
                records.append(TraceRecord(t + 1, on, addr, float(weights[addr]) if on else 0.0,
                                           float(x[t]), float(acc_tr[t])))
        return self.accumulator, report, records


def simulate_neuron(inputs, weights, sng: SngConfig | None = None, seed: int | None = None,
                    mode=DatapathMode.SPARSE, weight_bits=32, input_format: QFormat | None = None,
                    trace=False):
    """Clock one neuron over ``inputs``; returns ``(output, report, trace)``.

    With ``input_format`` the inputs are quantized to fixed-point integers
    first, so quantized weights give an exact integer accumulator.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if input_format is not None:
        x = input_format.to_int(x).astype(np.float64)
    dp = NeuronDatapath(np.asarray(weights), DatapathMode(mode), sng, seed, weight_bits)
    return dp.run(x, trace)


def simulate_layer(inputs, layer: CompressedLayer, mode=DatapathMode.SPARSE,
                   input_format: QFormat | None = None, trace=False):
    """All m neurons consume the same input stream in parallel.

    Returns ``(outputs, aggregate_report, traces)``; the aggregate cycle
    count is N (the neurons run side by side), the other counters are summed.
    Outputs of binary/ternary layers are the accumulator times the layer's
    weight scale; traces hold the unscaled accumulator.
    """
    mode = DatapathMode(mode)
    x = np.asarray(inputs, dtype=np.float64)
    if x.shape != (layer.n,):
        raise ValueError(f"expected {layer.n} inputs, got shape {x.shape}")
    dense = decompress_layer(layer) if mode is DatapathMode.FULLY_CONNECTED else None
    outputs = np.empty(layer.m, dtype=np.float64)
    total = ActivityReport()
    traces = [] if trace else None
    for j in range(layer.m):
        weights = dense[:, j] if dense is not None else layer.columns[j]
        out, rep, tr = simulate_neuron(x, weights, layer.sng, layer.column_seeds[j], mode,
                                       layer.weight_width_bits, input_format, trace)
        outputs[j] = out
        total = total + rep
        if trace:
            traces.append(tr)
    total.cycles = layer.n
    if layer.scale != 1.0:
        outputs *= layer.scale
    return outputs, total, traces


@dataclass(frozen=True)
class ModeComparison:
    fc: ActivityReport
    sparse: ActivityReport
    memory_bits_ratio: float
    memory_reads_ratio: float
    max_output_difference: float


def compare_modes(layer_dense: CompressedLayer, layer_sparse: CompressedLayer, inputs) -> ModeComparison:
    """Fully-connected datapath on the dense layer vs sparse datapath on the masked one."""
    if (layer_dense.n, layer_dense.m) != (layer_sparse.n, layer_sparse.m):
        raise ValueError("dense and sparse layers differ in shape")
    _, fc, _ = simulate_layer(inputs, layer_dense, DatapathMode.FULLY_CONNECTED)
    out_sp, sp, _ = simulate_layer(inputs, layer_sparse, DatapathMode.SPARSE)
    ref = decompress_layer(layer_sparse).astype(np.float64).T @ np.asarray(inputs, dtype=np.float64)
    ref *= layer_sparse.scale
    return ModeComparison(
        fc=fc,
        sparse=sp,
        memory_bits_ratio=sp.memory_bits / fc.memory_bits if fc.memory_bits else float("nan"),
        memory_reads_ratio=sp.memory_reads / fc.memory_reads if fc.memory_reads else float("nan"),
        max_output_difference=float(np.max(np.abs(out_sp - ref))) if len(ref) else 0.0,
    )


def replay_trace(records, weight_bits=32):
    """Recompute output and activity counters from a recorded trace."""
    acc = 0.0
    reads = 0
    for rec in records:
        if rec.sng_bit:
            if rec.address != reads:
                raise DatapathError(f"trace address {rec.address} at cycle {rec.cycle}, expected {reads}")
            acc = acc + rec.input * rec.weight
            reads += 1
    report = ActivityReport(len(records), reads, reads, reads, reads * weight_bits)
    return acc, report


def write_trace(fh, records, neuron=None) -> None:
    """One JSON object per cycle."""
    for rec in records:
        d = asdict(rec)
        if neuron is not None:
            d = {"neuron": neuron, **d}
        fh.write(json.dumps(d) + "\n")
