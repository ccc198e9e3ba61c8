# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled window aggregation kernel. Mirrors _agg_py exactly."""

import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef double _SEC = 1_000_000_000.0


def aggregate_arrays(timestamps, directions, int n_windows, long long window,
                     long long stride, int packet_channels):
    cdef const cnp.int64_t[::1] ts = np.ascontiguousarray(timestamps, dtype=np.int64)
    cdef const cnp.int8_t[::1] ds = np.ascontiguousarray(directions, dtype=np.int8)
    cdef int n_pkts_total = ts.shape[0]
    out_arr = np.zeros((n_windows, packet_channels + 4), dtype=np.float32)
    cdef cnp.float32_t[:, ::1] out = out_arr

    lo_arr = np.searchsorted(np.asarray(ts), np.arange(n_windows, dtype=np.int64) * stride, side="left")
    hi_arr = np.searchsorted(np.asarray(ts), np.arange(n_windows, dtype=np.int64) * stride + window, side="left")
    cdef cnp.int64_t[::1] lo = np.ascontiguousarray(lo_arr, dtype=np.int64)
    cdef cnp.int64_t[::1] hi = np.ascontiguousarray(hi_arr, dtype=np.int64)

    cdef Py_ssize_t k, i, a, b, m
    cdef int n_bursts, size
    cdef double sum_sizes, mean, var, dev, gap_total

    for k in range(n_windows):
        a = lo[k]
        b = hi[k]
        if b <= a:
            continue
        m = b - a
        if m > packet_channels:
            m = packet_channels
        for i in range(m):
            out[k, i] = ds[a + i]

        # first pass: burst count and size sum
        n_bursts = 1
        sum_sizes = <double>(b - a)
        for i in range(a + 1, b):
            if ds[i] != ds[i - 1]:
                n_bursts += 1
        mean = sum_sizes / n_bursts

        # second pass: size variance and inter-burst gaps
        var = 0.0
        gap_total = 0.0
        size = 1
        for i in range(a + 1, b):
            if ds[i] != ds[i - 1]:
                dev = size - mean
                var += dev * dev
                gap_total += <double>(ts[i] - ts[i - 1])
                size = 1
            else:
                size += 1
        dev = size - mean
        var += dev * dev
        var /= n_bursts

        out[k, packet_channels] = n_bursts
        out[k, packet_channels + 1] = mean
        out[k, packet_channels + 2] = var
        if n_bursts > 1:
            out[k, packet_channels + 3] = gap_total / (n_bursts - 1) / _SEC
    return out_arr
