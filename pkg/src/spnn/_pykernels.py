"""Pure-Python twins of the compiled kernels in ``_ckernels.pyx``.

Same signatures and results; used when the extension is unavailable or
``SPNN_PURE_PYTHON=1`` is set.
"""

import numpy as np


def _step(state, tapmask, mask, low_mask, debruijn):
    fb = bin(state & tapmask).count("1") & 1
    if debruijn and (state & low_mask) == 0:
        fb ^= 1
    return ((state << 1) | fb) & mask


def lfsr_next(state, width, tapmask, debruijn):
    mask = (1 << width) - 1
    return _step(state, tapmask, mask, mask >> 1, debruijn)


def lfsr_states(width, tapmask, seed, debruijn, length):
    mask = (1 << width) - 1
    low_mask = mask >> 1
    out = np.empty(length, dtype=np.uint32)
    state = seed
    for i in range(length):
        out[i] = state
        state = _step(state, tapmask, mask, low_mask, debruijn)
    return out


def sng_bits(width, tapmask, seed, debruijn, threshold, length):
    return (lfsr_states(width, tapmask, seed, debruijn, length) < threshold).astype(np.uint8)


def orbit_length(width, tapmask, seed, debruijn, limit):
    mask = (1 << width) - 1
    low_mask = mask >> 1
    state = seed
    for i in range(1, limit + 1):
        state = _step(state, tapmask, mask, low_mask, debruijn)
        if state == seed:
            return i
    return -1


def mac_stream(inputs, enable, weights, trace):
    n = len(inputs)
    depth = len(weights)
    counter = 0
    acc = 0.0
    addr_tr = np.empty(n, dtype=np.int64) if trace else None
    acc_tr = np.empty(n, dtype=np.float64) if trace else None
    for t in range(n):
        if enable[t]:
            if counter >= depth:
                raise IndexError(f"weight memory overrun at cycle {t + 1} (depth {depth})")
            if trace:
                addr_tr[t] = counter
            acc = acc + float(inputs[t]) * float(weights[counter])
            counter += 1
        elif trace:
            addr_tr[t] = counter
        if trace:
            acc_tr[t] = acc
    return acc, counter, addr_tr, acc_tr
