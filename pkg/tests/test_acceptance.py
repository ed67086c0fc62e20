"""Acceptance criteria; each test records one PASS/FAIL line (shown in the
terminal summary and printed with ``-s``)."""

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from gradcheck import CHECKS
from oracles import masked_dot, write_fake_mnist
from spnn.cli import main
from spnn.hwsim import DatapathMode, QFormat, simulate_layer, simulate_neuron
from spnn.lfsr import TAPS, LfsrConfig, LfsrMode, SngConfig, generate_mask, lfsr_orbit, make_sng, sng_stream
from spnn.model_store import compress_layer, decompress_layer, per_neuron_bits
from spnn.quantize import QuantMode, quantize
from spnn.train import Network, TrainConfig, nominal_parameter_count, train


def record(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title} -- {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


def test_c01_memory_bits_per_neuron():
    got = {}
    for p in (0.0, 0.5, 0.75, 0.875, 0.9375):
        mask = generate_mask(1024, 4, make_sng(1024, p, LfsrMode.DEBRUIJN), 1)
        bits = per_neuron_bits(compress_layer(np.ones((1024, 4)), mask, "binary"))
        got[p] = sorted(set(bits.tolist()))
    expect = {0.0: [1024], 0.5: [512], 0.75: [256], 0.875: [128], 0.9375: [64]}
    record(1, "binarized 1024-input neuron memory bits (exact)", got == expect, f"{got}")


def test_c02_latency_equals_input_count():
    n = 1024
    cycles = set()
    rng = np.random.default_rng(0)
    W = rng.uniform(-1, 1, (n, 4))
    x = rng.normal(size=n)
    for p in (0.0, 0.5, 0.75, 0.875, 0.9375):
        layer = compress_layer(W, generate_mask(n, 4, make_sng(n, p), 3), "binary")
        for mode in DatapathMode:
            cycles.add(simulate_layer(x, layer, mode)[1].cycles)
            for j in range(layer.m):
                weights = layer.columns[j] if mode is DatapathMode.SPARSE else decompress_layer(layer)[:, j]
                cycles.add(simulate_neuron(x, weights, layer.sng, layer.column_seeds[j], mode)[1].cycles)
    record(2, "cycle count equals N for all sparsities and both datapaths (exact)", cycles == {n}, f"cycles {cycles}")


def test_c03_parameter_counts():
    dense = nominal_parameter_count((784, 512, 512, 10), 0.0)
    sparse = nominal_parameter_count((784, 512, 512, 10), 0.5)
    built = Network.build(TrainConfig(shape=(784, 512, 512, 10), sparsity=0.0)).parameter_count()
    ok = dense == 669706 and sparse == 335370 and built == dense
    record(3, "784-512-512-10 parameters dense 669706 / sparse-50% 335370 (exact)", ok,
           f"dense {dense} (built network {built}), sparse {sparse}")


@pytest.mark.slow
def test_c04_sparse_beats_smaller_dense(mnist_split):
    sparse, dense = [], []
    for seed in range(3):
        sparse.append(train(TrainConfig(shape=(784, 100, 100, 10), sparsity=0.9, epochs=50, rng_seed=seed),
                            mnist_split).test_error)
        dense.append(train(TrainConfig(shape=(784, 12, 12, 10), sparsity=0.0, epochs=50, rng_seed=seed),
                           mnist_split).test_error)
    s, d = float(np.mean(sparse)), float(np.mean(dense))
    record(4, "sparse-90% 784-100-100-10 < dense 784-12-12-10 and <= 5.0% (3 seeds, 50 epochs)",
           s < d and s <= 5.0, f"sparse {s:.2f}% {sparse}, dense {d:.2f}% {dense}")


@pytest.mark.slow
def test_c05_sparse_half_matches_dense(mnist_split):
    errs = {}
    for p in (0.5, 0.0):
        errs[p] = train(TrainConfig(shape=(784, 512, 512, 10), sparsity=p, epochs=25, rng_seed=0),
                        mnist_split).test_error
    delta = abs(errs[0.5] - errs[0.0])
    record(5, "sparse-50% vs dense 784-512-512-10, 25 epochs, |delta| <= 0.7 points", delta <= 0.7,
           f"sparse {errs[0.5]:.2f}%, dense {errs[0.0]:.2f}%, delta {delta:.2f}")


def test_c06_lfsr_suite():
    problems = []
    for width in range(3, 17):
        for mode in LfsrMode:
            cfg = LfsrConfig(width, TAPS[width], 1, mode)
            orbit = lfsr_orbit(cfg, cfg.period + 1)
            if len(set(orbit[:-1].tolist())) != cfg.period or orbit[-1] != orbit[0]:
                problems.append((width, mode.value))
    rng = np.random.default_rng(6)
    bad_counts = 0
    for _ in range(1000):
        width = int(rng.integers(3, 17))
        sng = SngConfig(LfsrConfig(width, (), int(rng.integers(1, 1 << width)), LfsrMode.DEBRUIJN),
                        float(rng.uniform(0, 1)))
        bad_counts += int(sng_stream(sng, 1 << width).sum()) != sng.threshold
    record(6, "LFSR periods/uniqueness for widths 3-16 and 1000 debruijn popcounts (exact)",
           not problems and bad_counts == 0, f"orbit failures {problems}, popcount failures {bad_counts}/1000")


def test_c07_compression_roundtrip():
    rng = np.random.default_rng(7)
    failures = 0
    quants = list(QuantMode)
    for i in range(1000):
        n, m = int(rng.integers(8, 129)), int(rng.integers(1, 17))
        p = (0.5, 0.75, 0.875, 0.9375)[i % 4]
        quant = quants[(i // 4) % 3]
        mode = LfsrMode.DEBRUIJN if i % 2 else LfsrMode.MAXIMAL
        sng = make_sng(n, p, mode)
        mask = generate_mask(n, m, sng, int(rng.integers(1, sng.lfsr.period_nonzero + 1)))
        W = rng.uniform(-1.5, 1.5, (n, m)).astype(np.float32)
        expect = quantize(W, quant) * mask.bits
        failures += not np.array_equal(decompress_layer(compress_layer(W, mask, quant)), expect)
    record(7, "1000 random layers decompress to quantize-then-mask weights (exact)", failures == 0,
           f"{failures}/1000 mismatches")


def test_c08_datapath_equivalence():
    rng = np.random.default_rng(8)
    q = QFormat()
    worst_real = 0.0
    exact_fail = reads_fail = 0
    for i in range(1000):
        n = int(rng.integers(4, 300))
        sng = make_sng(n, float(rng.choice([0.5, 0.75, 0.875, 0.9375, rng.uniform(0, 1)])))
        mask = generate_mask(n, 1, sng, int(rng.integers(1, sng.lfsr.period_nonzero + 1)))
        quant = (QuantMode.NONE, QuantMode.BINARY, QuantMode.TERNARY)[i % 3]
        layer = compress_layer(rng.uniform(-1, 1, (n, 1)), mask, quant)
        x = rng.uniform(-4, 4, n)
        col, seed = layer.columns[0], layer.column_seeds[0]
        dense_col = decompress_layer(layer)[:, 0]
        if quant is QuantMode.NONE:
            out, rep, _ = simulate_neuron(x, col, sng, seed)
            ref = masked_dot(mask.bits[:, 0], dense_col, x)
            worst_real = max(worst_real, abs(out - ref) / max(abs(ref), 1e-300))
        else:
            out, rep, _ = simulate_neuron(x, col, sng, seed, input_format=q)
            ref = int(np.dot(q.to_int(x), dense_col.astype(np.int64)))
            exact_fail += out != ref
        reads_fail += rep.memory_reads != int(mask.bits.sum())
    ok = worst_real <= 1e-6 and exact_fail == 0 and reads_fail == 0
    record(8, "1000 neurons: simulator = masked dot product, reads = popcount", ok,
           f"max real rel. error {worst_real:.2e}, quantized mismatches {exact_fail}, read mismatches {reads_fail}")


def test_c09_gradient_checks():
    worst = {}
    for name, check in CHECKS.items():
        rng = np.random.default_rng(9)
        worst[name] = max(check(rng) for _ in range(100))
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    record(9, "finite-difference gradient checks, 100 instances each, max rel. error <= 1e-4",
           max(worst.values()) <= 1e-4, detail)


def test_c10_training_is_byte_deterministic(tmp_path):
    data = tmp_path / "mnist"
    write_fake_mnist(data, 1200, 100, seed=10)
    blobs = []
    for k in range(2):
        out = tmp_path / f"run{k}.spnn"
        args = ["train", "--data-dir", str(data), "--split", "800,200,200", "--shape", "784,64,32,10",
                "--sparsity", "0.75", "--quant", "ternary", "--epochs", "4", "--seed", "5", "--out", str(out)]
        assert main(args) == 0
        blobs.append(out.read_bytes())
    record(10, "two identical train invocations give byte-identical model files", blobs[0] == blobs[1],
           f"{len(blobs[0])} bytes each")
