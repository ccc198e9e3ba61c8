"""Overlapping-window feature aggregation.

Partitions a trace into sliding windows of length `window` and stride
`stride < window` and emits one feature row per window: the window's packet
direction sequence (truncated / zero-padded to `packet_channels`) followed by
four burst descriptors (count, mean size, population size variance, mean
inter-burst interval in seconds).

The per-trace hot loop has two interchangeable implementations: a compiled
Cython kernel (built at install time) and a pure-Python fallback. The kernel
is selected at import; set DEMUX_PURE_PYTHON=1 to force the fallback.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ..trace import SEC, Trace, duration, segment_bursts

BURST_CHANNELS = 4


class WindowError(ValueError):
    pass


@dataclass(frozen=True)
class WindowConfig:
    window: int = 20_000_000  # ns
    stride: int = 10_000_000  # ns
    packet_channels: int = 4
    # Non-overlapping (stride == window) partitioning is permitted only for
    # the ablation baseline; the production contract requires overlap.
    allow_non_overlapping: bool = False

    def __post_init__(self):
        if self.window <= 0 or self.stride <= 0:
            raise WindowError("window and stride must be positive")
        if self.stride > self.window or (self.stride == self.window and not self.allow_non_overlapping):
            raise WindowError("stride must be smaller than window (overlap required)")
        if self.packet_channels < 1:
            raise WindowError("packet_channels must be >= 1")

    @property
    def channels(self) -> int:
        return self.packet_channels + BURST_CHANNELS


def window_count(total_duration: int, cfg: WindowConfig) -> int:
    """Number of windows for a trace of the given duration, clamped to >= 1."""
    if total_duration < cfg.window:
        return 1
    return (total_duration - cfg.window) // cfg.stride + 1


def window_span(k: int, cfg: WindowConfig) -> tuple[int, int]:
    """Half-open time interval [k*stride, k*stride + window) covered by window k."""
    return k * cfg.stride, k * cfg.stride + cfg.window


def window_packets(trace: Trace, k: int, cfg: WindowConfig):
    """Packets of window k, in order; overlapping windows share packets."""
    n_windows = window_count(duration(trace), cfg)
    if not 0 <= k < n_windows:
        raise WindowError(f"window index {k} out of range [0, {n_windows})")
    lo, hi = window_span(k, cfg)
    a = int(np.searchsorted(trace.timestamps, lo, side="left"))
    b = int(np.searchsorted(trace.timestamps, hi, side="left"))
    return trace.timestamps[a:b], trace.directions[a:b]


def packet_features(directions, cfg: WindowConfig) -> np.ndarray:
    """Window direction sequence truncated / zero-padded to packet_channels."""
    out = np.zeros(cfg.packet_channels, dtype=np.float32)
    ds = np.asarray(directions)[: cfg.packet_channels]
    out[: ds.size] = ds
    return out


def burst_features(timestamps, directions) -> np.ndarray:
    """[burst count, mean size, population size variance, mean gap seconds]."""
    bursts = segment_bursts(directions, timestamps)
    out = np.zeros(BURST_CHANNELS, dtype=np.float32)
    n = len(bursts)
    if n == 0:
        return out
    sizes = np.asarray([b.size for b in bursts], dtype=np.float64)
    mean = sizes.sum() / n
    var = float(((sizes - mean) ** 2).sum() / n)
    gap = 0.0
    if n > 1:
        gaps = [bursts[i + 1].start - bursts[i].end for i in range(n - 1)]
        gap = sum(gaps) / (n - 1) / SEC
    out[:] = (n, mean, var, gap)
    return out


def _select_backend():
    if os.environ.get("DEMUX_PURE_PYTHON"):
        from . import _agg_py

        return _agg_py.aggregate_arrays, "python"
    try:
        from . import _agg_cy

        return _agg_cy.aggregate_arrays, "cython"
    except ImportError:
        from . import _agg_py

        return _agg_py.aggregate_arrays, "python"


_aggregate_arrays, BACKEND = _select_backend()


def aggregate(trace: Trace, cfg: WindowConfig | None = None, backend: str | None = None) -> np.ndarray:
    """Feature tensor of shape (L, packet_channels + 4), float32, row-major.

    Row k holds the packet-level and burst-level features of window k. An
    empty or shorter-than-one-window trace yields a single (possibly all-zero)
    row.
    """
    cfg = cfg or WindowConfig()
    fn = _aggregate_arrays
    if backend is not None:
        from . import _agg_py

        if backend == "python":
            fn = _agg_py.aggregate_arrays
        elif backend == "cython":
            from . import _agg_cy

            fn = _agg_cy.aggregate_arrays
        else:
            raise WindowError(f"unknown backend {backend!r}")
    n_windows = window_count(duration(trace), cfg)
    return fn(
        np.ascontiguousarray(trace.timestamps),
        np.ascontiguousarray(trace.directions),
        n_windows,
        cfg.window,
        cfg.stride,
        cfg.packet_channels,
    )
