# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: LFSR state streams and the serial MAC datapath."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint8_t, uint32_t, int64_t

cnp.import_array()

cdef extern from *:
    int __builtin_parity(unsigned int x) nogil


cdef inline uint32_t _step(uint32_t state, uint32_t tapmask, uint32_t mask,
                           uint32_t low_mask, bint debruijn) nogil:
    cdef uint32_t fb = <uint32_t>__builtin_parity(state & tapmask)
    if debruijn and (state & low_mask) == 0:
        fb ^= 1
    return ((state << 1) | fb) & mask


def lfsr_next(uint32_t state, int width, uint32_t tapmask, bint debruijn):
    cdef uint32_t mask = (1u << width) - 1
    return _step(state, tapmask, mask, mask >> 1, debruijn)


def lfsr_states(int width, uint32_t tapmask, uint32_t seed, bint debruijn, Py_ssize_t length):
    cdef cnp.ndarray[uint32_t, ndim=1] out = np.empty(length, dtype=np.uint32)
    cdef uint32_t mask = (1u << width) - 1
    cdef uint32_t low_mask = mask >> 1
    cdef uint32_t state = seed
    cdef Py_ssize_t i
    with nogil:
        for i in range(length):
            out[i] = state
            state = _step(state, tapmask, mask, low_mask, debruijn)
    return out


def sng_bits(int width, uint32_t tapmask, uint32_t seed, bint debruijn,
             uint32_t threshold, Py_ssize_t length):
    cdef cnp.ndarray[uint8_t, ndim=1] out = np.empty(length, dtype=np.uint8)
    cdef uint32_t mask = (1u << width) - 1
    cdef uint32_t low_mask = mask >> 1
    cdef uint32_t state = seed
    cdef Py_ssize_t i
    with nogil:
        for i in range(length):
            out[i] = 1 if state < threshold else 0
            state = _step(state, tapmask, mask, low_mask, debruijn)
    return out


def orbit_length(int width, uint32_t tapmask, uint32_t seed, bint debruijn, Py_ssize_t limit):
    """Steps until the seed recurs, or -1 if it does not within ``limit``."""
    cdef uint32_t mask = (1u << width) - 1
    cdef uint32_t low_mask = mask >> 1
    cdef uint32_t state = seed
    cdef Py_ssize_t i
    cdef Py_ssize_t found = -1
    with nogil:
        for i in range(1, limit + 1):
            state = _step(state, tapmask, mask, low_mask, debruijn)
            if state == seed:
                found = i
                break
    return found


def mac_stream(double[::1] inputs, uint8_t[::1] enable, double[::1] weights, bint trace):
    cdef Py_ssize_t n = inputs.shape[0]
    cdef Py_ssize_t depth = weights.shape[0]
    cdef Py_ssize_t t
    cdef int64_t counter = 0
    cdef int64_t overrun = -1
    cdef double acc = 0.0
    cdef cnp.ndarray[int64_t, ndim=1] addr_arr
    cdef cnp.ndarray[double, ndim=1] acc_arr
    cdef int64_t[::1] addr_tr
    cdef double[::1] acc_tr
    if trace:
        addr_arr = np.empty(n, dtype=np.int64)
        acc_arr = np.empty(n, dtype=np.float64)
        addr_tr = addr_arr
        acc_tr = acc_arr
    with nogil:
        for t in range(n):
            if enable[t]:
                if counter >= depth:
                    overrun = t
                    break
                if trace:
                    addr_tr[t] = counter
                acc = acc + inputs[t] * weights[counter]
                counter += 1
            elif trace:
                addr_tr[t] = counter
            if trace:
                acc_tr[t] = acc
    if overrun >= 0:
        raise IndexError(f"weight memory overrun at cycle {overrun + 1} (depth {depth})")
    if trace:
        return acc, counter, addr_arr, acc_arr
    return acc, counter, None, None
