"""Compiled vs pure-Python kernel timings.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from spnn import _pykernels as pure
from spnn import kernels
from spnn.lfsr import TAPS, taps_to_mask


def cases():
    w = 10
    tm = taps_to_mask(TAPS[w])
    rng = np.random.default_rng(0)
    x = rng.normal(size=1024)
    en = (rng.random(1024) < 0.5).astype(np.uint8)
    wts = rng.normal(size=int(en.sum()))
    # one 784x512 mask worth of SNG streams
    yield "sng_bits 784 x 512 columns", lambda k: [k.sng_bits(w, tm, s, True, 512, 784) for s in range(1, 513)]
    yield "lfsr_states 2**16 steps", lambda k: k.lfsr_states(16, taps_to_mask(TAPS[16]), 1, True, 1 << 16)
    yield "orbit_length width 16", lambda k: k.orbit_length(16, taps_to_mask(TAPS[16]), 1, False, 1 << 16)
    yield "mac_stream 1024 inputs x 64", lambda k: [k.mac_stream(x, en, wts, False) for _ in range(64)]
    yield "mac_stream traced 1024 x 64", lambda k: [k.mac_stream(x, en, wts, True) for _ in range(64)]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.compiled is None:
        raise SystemExit("compiled extension not available; rebuild with `pip install -e . --no-build-isolation`")
    print(f"{'kernel':32s} {'compiled [ms]':>14s} {'python [ms]':>12s} {'speedup':>8s}")
    for name, fn in cases():
        tc = min(timeit.repeat(lambda: fn(kernels.compiled), number=1, repeat=args.repeat)) * 1e3
        tp = min(timeit.repeat(lambda: fn(pure), number=1, repeat=max(1, args.repeat // 2))) * 1e3
        print(f"{name:32s} {tc:14.3f} {tp:12.2f} {tp / tc:7.0f}x")


if __name__ == "__main__":
    main()
