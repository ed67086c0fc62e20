import io
import json

import numpy as np
import pytest

from oracles import masked_dot
from spnn.hwsim import (
    DatapathError,
    DatapathMode,
    QFormat,
    compare_modes,
    replay_trace,
    simulate_layer,
    simulate_neuron,
    write_trace,
)
from spnn.lfsr import LfsrConfig, LfsrMode, SngConfig, generate_mask, make_sng, sng_stream
from spnn.model_store import compress_layer, decompress_layer

EXAMPLE_SNG = SngConfig(LfsrConfig(3, (3, 2), 1, LfsrMode.DEBRUIJN), 0.57)


def test_worked_example_neuron():
    assert sng_stream(EXAMPLE_SNG, 7, seed=4).tolist() == [0, 1, 1, 1, 0, 1, 0]
    out, rep, tr = simulate_neuron(np.arange(1, 8), [2, 3, 4, 6], EXAMPLE_SNG, 4, trace=True)
    assert out == 65
    assert (rep.cycles, rep.memory_reads, rep.mac_operations, rep.accumulator_loads) == (7, 4, 4, 4)
    assert [r.address for r in tr] == [0, 0, 1, 2, 3, 3, 4]
    assert [r.accumulator for r in tr] == [0, 4, 13, 29, 29, 65, 65]


def test_all_zero_stream():
    sng = make_sng(16, 1.0)
    out, rep, _ = simulate_neuron(np.ones(16), [], sng, 3)
    assert out == 0 and rep.memory_reads == 0 and rep.cycles == 16


def test_fully_connected_mode():
    rng = np.random.default_rng(0)
    x, w = rng.normal(size=30), rng.normal(size=30)
    out, rep, _ = simulate_neuron(x, w, mode=DatapathMode.FULLY_CONNECTED)
    assert rep.memory_reads == 30 and rep.cycles == 30
    assert out == pytest.approx(float(np.dot(x, w)), rel=1e-12)
    with pytest.raises(DatapathError):
        simulate_neuron(x, w[:-1], mode=DatapathMode.FULLY_CONNECTED)


def test_overrun_and_underrun_detected():
    with pytest.raises(DatapathError):
        simulate_neuron(np.arange(1, 8), [2, 3, 4], EXAMPLE_SNG, 4)
    with pytest.raises(DatapathError):
        simulate_neuron(np.arange(1, 8), [2, 3, 4, 6, 7], EXAMPLE_SNG, 4)


@pytest.mark.parametrize("quant", ["none", "binary", "ternary"])
def test_layer_matches_decompress_then_matmul(quant):
    rng = np.random.default_rng(5)
    n, m = 64, 6
    mask = generate_mask(n, m, make_sng(n, 0.75), 9)
    layer = compress_layer(rng.uniform(-1, 1, (n, m)), mask, quant)
    x = rng.normal(size=n)
    out, rep, _ = simulate_layer(x, layer)
    ref = decompress_layer(layer).astype(np.float64).T @ x * layer.scale
    np.testing.assert_allclose(out, ref, rtol=1e-6, atol=1e-12)
    assert rep.cycles == n
    assert rep.memory_reads == int(mask.bits.sum())
    for j in range(m):
        assert out[j] == pytest.approx(masked_dot(mask.bits[:, j], decompress_layer(layer)[:, j], x) * layer.scale)


def test_latency_is_n_in_both_modes():
    n = 1024
    for p in (0.0, 0.5, 0.9375):
        layer = compress_layer(np.ones((n, 3)), generate_mask(n, 3, make_sng(n, p), 1), "binary")
        for mode in DatapathMode:
            assert simulate_layer(np.ones(n), layer, mode)[1].cycles == n


def test_single_neuron_layer_reduces_to_neuron():
    rng = np.random.default_rng(2)
    mask = generate_mask(40, 1, make_sng(40, 0.5), 6)
    layer = compress_layer(rng.normal(size=(40, 1)), mask)
    x = rng.normal(size=40)
    out, rep, _ = simulate_layer(x, layer)
    single, srep, _ = simulate_neuron(x, layer.columns[0], layer.sng, layer.column_seeds[0])
    assert out[0] == single and rep == srep


@pytest.mark.parametrize("p,bits_ratio", [(0.9375, 64 / 1024), (0.5, 0.5), (0.0, 1.0)])
def test_compare_modes(p, bits_ratio):
    n = 1024
    rng = np.random.default_rng(0)
    W = rng.uniform(-1, 1, (n, 2))
    dense = compress_layer(W, generate_mask(n, 2, make_sng(n, 0.0), 1), "binary")
    sparse = compress_layer(W, generate_mask(n, 2, make_sng(n, p), 1), "binary")
    cmp = compare_modes(dense, sparse, rng.normal(size=n))
    assert cmp.memory_bits_ratio == bits_ratio
    assert cmp.memory_reads_ratio == 1 - p
    assert cmp.sparse.memory_bits == 2 * round(1024 * (1 - p))
    assert cmp.max_output_difference < 1e-9
    with pytest.raises(ValueError):
        compare_modes(dense, compress_layer(W[:, :1], generate_mask(n, 1, make_sng(n, p), 1)), np.ones(n))


def test_trace_replay_and_export():
    rng = np.random.default_rng(3)
    mask = generate_mask(50, 1, make_sng(50, 0.6), 2)
    layer = compress_layer(rng.normal(size=(50, 1)), mask)
    x = rng.normal(size=50)
    out, rep, tr = simulate_neuron(x, layer.columns[0], layer.sng, layer.column_seeds[0], trace=True)
    acc, rrep = replay_trace(tr)
    assert acc == out and rrep == rep
    buf = io.StringIO()
    write_trace(buf, tr, neuron=0)
    lines = buf.getvalue().splitlines()
    assert len(lines) == 50
    first = json.loads(lines[0])
    assert set(first) == {"neuron", "cycle", "sng_bit", "address", "weight", "input", "accumulator"}


def test_fixed_point_inputs_are_exact_with_quantized_weights():
    rng = np.random.default_rng(8)
    q = QFormat()
    n = 300
    mask = generate_mask(n, 1, make_sng(n, 0.7), 11)
    layer = compress_layer(rng.uniform(-1, 1, (n, 1)), mask, "ternary")
    x = rng.uniform(-3, 3, n)
    out, _, _ = simulate_neuron(x, layer.columns[0], layer.sng, layer.column_seeds[0], input_format=q)
    xi = q.to_int(x)
    w = decompress_layer(layer)[:, 0].astype(np.int64)
    assert out == float(int(np.dot(xi, w)))
    assert q.to_int([1.0, -200.0]).tolist() == [256, -32768]
