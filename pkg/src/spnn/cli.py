"""Command line: ``spnn train | eval | simulate | report``.

Exit codes: 0 success, 1 simulator/software mismatch, 2 usage error,
3 data or model-file error, 4 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import sys

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


def _int_list(text):
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    return vals[0] if len(vals) == 1 else vals


def _add_data_args(p):
    p.add_argument("--data-dir", help="directory with MNIST IDX files (default: $SPNN_DATA_DIR)")
    p.add_argument("--split", type=_int_list, default=(40000, 10000, 10000),
                   help="train,validation,test sizes carved from the training file")
    p.add_argument("--official-test", action="store_true",
                   help="also evaluate on the official 10000-image test file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spnn", description="LFSR-masked sparsely-connected networks")
    parser.add_argument("--threads", type=int, default=1, help="cap on BLAS worker threads")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a sparsely-connected network and write a model file")
    t.add_argument("--shape", type=_int_list, default=(784, 100, 100, 10))
    t.add_argument("--sparsity", type=_float_list, default=0.0,
                   help="fraction of removed connections, one value or one per layer")
    t.add_argument("--quant", choices=["none", "binary", "ternary"], default="none")
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--lr-decay", type=float, default=0.98)
    t.add_argument("--batch", type=int, default=100)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--mask-seed", type=int, default=1)
    t.add_argument("--lfsr-mode", choices=["debruijn", "maximal"], default="debruijn")
    t.add_argument("--export", choices=["auto", "real", "quantized"], default="real",
                   help="weight storage for quantized networks (real keeps 32-bit weights)")
    t.add_argument("--test-mode", choices=["real", "quantized"], default="real",
                   help="weights used for validation/test during training")
    t.add_argument("--out", required=True, help="model file to write")
    _add_data_args(t)

    e = sub.add_parser("eval", help="misclassification rate of a model file")
    e.add_argument("model")
    e.add_argument("--test-mode", choices=["real", "quantized"], default="real")
    e.add_argument("--json", action="store_true")
    _add_data_args(e)

    s = sub.add_parser("simulate", help="run one layer through the neuron datapath simulator")
    s.add_argument("model")
    s.add_argument("--layer", type=int, default=0)
    s.add_argument("--input", type=int, default=0, help="sample index in the carved test split")
    s.add_argument("--mode", choices=["fc", "sparse"], default="sparse")
    s.add_argument("--trace", help="write per-cycle JSON lines to this file")
    s.add_argument("--rtol", type=float, default=1e-4)
    s.add_argument("--json", action="store_true")
    _add_data_args(s)

    r = sub.add_parser("report", help="memory footprint per layer and neuron")
    r.add_argument("model")
    r.add_argument("--json", action="store_true")
    return parser


def _load_split(args):
    from .data_io import load_mnist, make_split, to_dataset

    images, labels, t_images, t_labels = load_mnist(args.data_dir, official_test=args.official_test)
    split = make_split(images, labels, args.split)
    official = None
    if args.official_test:
        if t_images is None:
            raise FileNotFoundError("official test files not found in the data directory")
        official = to_dataset(t_images, t_labels)
    return split, official


def _test_phase(network, mode: str):
    from .quantize import Phase, QuantMode

    if mode == "quantized":
        if network.quant is QuantMode.NONE:
            print("warning: --test-mode quantized on an unquantized model; using real weights", file=sys.stderr)
            return Phase.TEST_REAL
        return Phase.TEST_QUANTIZED
    return Phase.TEST_REAL


def cmd_train(args) -> int:
    from .model_store import export_network, write_model
    from .train import Network, TrainConfig, train

    cfg = TrainConfig(
        shape=args.shape, sparsity=args.sparsity, quant=args.quant, learning_rate=args.lr,
        lr_decay=args.lr_decay, batch_size=args.batch, epochs=args.epochs, rng_seed=args.seed,
        mask_seed=args.mask_seed, lfsr_mode=args.lfsr_mode,
    )
    split, official = _load_split(args)
    if split.train.x.shape[1] != cfg.shape[0]:
        raise ValueError(f"network input width {cfg.shape[0]} does not match {split.train.x.shape[1]} pixels")
    phase = _test_phase(Network.build(cfg), args.test_mode)
    extra = {"official_test": (official.x, official.y)} if official is not None else None

    def emit(rec):
        print(rec.to_json(), flush=True)

    result = train(cfg, split, phase, on_epoch=emit, extra_eval=extra)
    model = export_network(result.network, args.export, epochs=cfg.epochs, config_hash=cfg.config_hash())
    write_model(args.out, model)
    print(json.dumps({"best_epoch": result.best_epoch, "val_error": result.best_val_error,
                      "test_error": result.test_error, "parameters": result.network.parameter_count(),
                      "model": args.out}), file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .model_store import load_network, read_model
    from .train import evaluate

    network = load_network(read_model(args.model))
    phase = _test_phase(network, args.test_mode)
    split, official = _load_split(args)
    out = {
        "test_mode": "quantized" if phase.value == "test_quantized" else "real",
        "validation_error": evaluate(network, split.validation.x, split.validation.y, phase),
        "test_error": evaluate(network, split.test.x, split.test.y, phase),
        "parameters": network.parameter_count(),
        "parameters_with_batchnorm": network.parameter_count(include_batchnorm=True),
    }
    if official is not None:
        out["official_test_error"] = evaluate(network, official.x, official.y, phase)
    if args.json:
        print(json.dumps(out))
    else:
        for key, val in out.items():
            print(f"{key:28s} {val:.4f}" if isinstance(val, float) else f"{key:28s} {val}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    import numpy as np

    from .hwsim import DatapathMode, simulate_layer, write_trace
    from .model_store import load_network, per_neuron_bits, read_model
    from .quantize import Phase

    model = read_model(args.model)
    if not 0 <= args.layer < len(model.layers):
        raise ValueError(f"--layer must be in [0, {len(model.layers) - 1}]")
    network = load_network(model)
    layer = model.layers[args.layer]
    split, _ = _load_split(args)
    if not 0 <= args.input < len(split.test):
        raise ValueError(f"--input must be in [0, {len(split.test) - 1}]")
    phase = Phase.TEST_REAL if layer.weight_width_bits == 32 else Phase.TEST_QUANTIZED
    x, z = network.pre_activations(split.test.x[args.input:args.input + 1], args.layer, phase)
    mode = DatapathMode.FULLY_CONNECTED if args.mode == "fc" else DatapathMode.SPARSE
    outputs, report, traces = simulate_layer(x[0], layer, mode, trace=bool(args.trace))
    hw = outputs + layer.bias.astype(np.float64)
    sw = z[0].astype(np.float64)
    diff = float(np.max(np.abs(hw - sw)))
    scale = float(np.max(np.abs(sw))) or 1.0
    ok = diff <= args.rtol * scale
    if args.trace:
        with open(args.trace, "w") as fh:
            for j, tr in enumerate(traces):
                write_trace(fh, tr, neuron=j)
    bits = per_neuron_bits(layer) if mode is DatapathMode.SPARSE else np.full(layer.m, layer.n * layer.weight_width_bits)
    out = {
        "layer": args.layer, "mode": mode.value, "inputs": layer.n, "neurons": layer.m,
        "cycles": report.cycles, "memory_reads": report.memory_reads,
        "mac_operations": report.mac_operations, "accumulator_loads": report.accumulator_loads,
        "memory_bits": report.memory_bits,
        "memory_bits_per_neuron_min": int(bits.min()), "memory_bits_per_neuron_max": int(bits.max()),
        "max_abs_difference": diff, "match": ok,
    }
    if args.json:
        print(json.dumps(out))
    else:
        for key, val in out.items():
            print(f"{key:28s} {val}")
    if not ok:
        print(f"error: simulator output differs from the software forward pass by {diff:g}", file=sys.stderr)
        return EXIT_MISMATCH
    return EXIT_OK


def footprint_table(model) -> dict:
    from .model_store import memory_footprint_bits, per_neuron_bits

    rows = []
    for k, c in enumerate(model.layers):
        depth = c.kept_counts()
        rows.append({
            "layer": k, "inputs": c.n, "neurons": c.m, "quant": c.quant.value,
            "weight_bits": c.weight_width_bits,
            "sparsity": 1.0 - float(depth.sum()) / (c.n * c.m),
            "lfsr_width": c.sng.lfsr.width_bits, "lfsr_mode": c.sng.lfsr.mode.value,
            "threshold": c.sng.threshold,
            "depth_min": int(depth.min()), "depth_mean": float(depth.mean()), "depth_max": int(depth.max()),
            "bits_per_neuron_min": int(per_neuron_bits(c).min()),
            "bits_per_neuron_max": int(per_neuron_bits(c).max()),
            "memory_bits": memory_footprint_bits(c),
            "dense_memory_bits": c.n * c.m * c.weight_width_bits,
        })
    total = sum(r["memory_bits"] for r in rows)
    dense = sum(r["dense_memory_bits"] for r in rows)
    return {"layers": rows, "total_memory_bits": total, "total_dense_memory_bits": dense}


def cmd_report(args) -> int:
    from .model_store import read_model

    table = footprint_table(read_model(args.model))
    if args.json:
        print(json.dumps(table))
        return EXIT_OK
    header = f"{'layer':>5} {'n':>6} {'m':>6} {'quant':>8} {'bits':>4} {'sparsity':>8} {'depth(min/mean/max)':>22} {'memory bits':>12}"
    print(header)
    for r in table["layers"]:
        depth = f"{r['depth_min']}/{r['depth_mean']:.1f}/{r['depth_max']}"
        print(f"{r['layer']:>5} {r['inputs']:>6} {r['neurons']:>6} {r['quant']:>8} {r['weight_bits']:>4} "
              f"{r['sparsity']:>8.4f} {depth:>22} {r['memory_bits']:>12}")
    print(f"total memory bits {table['total_memory_bits']} (fully-connected {table['total_dense_memory_bits']})")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "simulate": cmd_simulate, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    import logging

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from threadpoolctl import threadpool_limits

    from .data_io import IdxFormatError
    from .model_store import ModelFormatError
    from .train import DivergenceError

    try:
        with threadpool_limits(limits=max(1, args.threads)):
            return COMMANDS[args.command](args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FileNotFoundError, IdxFormatError, ModelFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
