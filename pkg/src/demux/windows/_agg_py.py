"""Pure-Python window aggregation kernel (fallback for the Cython build).

Must stay numerically identical to _agg_cy: same accumulation order, same
float64 intermediates, same float32 output.
"""

from __future__ import annotations

import numpy as np

_SEC = 1_000_000_000.0


def aggregate_arrays(timestamps, directions, n_windows, window, stride, packet_channels):
    ts = np.asarray(timestamps, dtype=np.int64)
    ds = np.asarray(directions, dtype=np.int8)
    out = np.zeros((n_windows, packet_channels + 4), dtype=np.float32)
    starts = np.arange(n_windows, dtype=np.int64) * stride
    lo = np.searchsorted(ts, starts, side="left")
    hi = np.searchsorted(ts, starts + window, side="left")
    for k in range(n_windows):
        a, b = int(lo[k]), int(hi[k])
        n_pkts = b - a
        if n_pkts == 0:
            continue
        # packet channels: leading direction sequence, zero-padded
        m = min(n_pkts, packet_channels)
        out[k, :m] = ds[a : a + m]
        # burst segmentation within the window
        w_ds = ds[a:b]
        w_ts = ts[a:b]
        flips = np.flatnonzero(w_ds[1:] != w_ds[:-1]) + 1
        b_starts = np.concatenate(([0], flips))
        b_ends = np.concatenate((flips, [n_pkts]))
        n_bursts = b_starts.size
        sizes = (b_ends - b_starts).astype(np.float64)
        mean = sizes.sum() / n_bursts
        var = float(((sizes - mean) ** 2).sum() / n_bursts)
        gap = 0.0
        if n_bursts > 1:
            # inter-burst interval: next burst's first packet - this burst's last
            gap_total = float((w_ts[b_starts[1:]] - w_ts[b_ends[:-1] - 1]).sum())
            gap = gap_total / (n_bursts - 1) / _SEC
        base = packet_channels
        out[k, base] = n_bursts
        out[k, base + 1] = mean
        out[k, base + 2] = var
        out[k, base + 3] = gap
    return out
