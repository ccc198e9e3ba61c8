"""Canonical packet/trace data model and burst segmentation.

Timestamps are integer nanoseconds relative to trace start so that all
downstream windowing arithmetic is exact and platform independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

MS = 1_000_000  # ns per millisecond
SEC = 1_000_000_000  # ns per second

TRACE_HEADER = "# demux-trace v1"


class TraceError(ValueError):
    """Malformed trace data."""


class UnsortedTraceError(TraceError):
    """Packet timestamps are not nondecreasing."""


class Packet(NamedTuple):
    direction: int  # +1 outgoing, -1 incoming
    timestamp: int  # ns relative to trace start


@dataclass(frozen=True)
class LabelVector:
    """Binary multi-label ground truth over M monitored classes."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.ndim != 1 or not np.isin(bits, (0, 1)).all():
            raise TraceError("label vector must be a flat 0/1 vector")
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_indices(cls, indices: Iterable[int], num_classes: int) -> "LabelVector":
        bits = np.zeros(num_classes, dtype=np.uint8)
        idx = list(indices)
        if idx:
            bits[np.asarray(idx, dtype=np.int64)] = 1
        return cls(bits)

    @property
    def num_classes(self) -> int:
        return int(self.bits.shape[0])

    @property
    def indices(self) -> list[int]:
        return np.flatnonzero(self.bits).tolist()

    def popcount(self) -> int:
        return int(self.bits.sum())

    def union(self, other: "LabelVector") -> "LabelVector":
        if self.num_classes != other.num_classes:
            raise TraceError("label vectors differ in class-universe size")
        return LabelVector(self.bits | other.bits)

    def __eq__(self, other) -> bool:
        return isinstance(other, LabelVector) and np.array_equal(self.bits, other.bits)


@dataclass(frozen=True)
class Burst:
    """Maximal run of same-direction packets."""

    direction: int
    size: int
    start: int  # ns, timestamp of first member packet
    end: int  # ns, timestamp of last member packet

    def __post_init__(self):
        if self.size < 1:
            raise TraceError("burst size must be >= 1")
        if self.start > self.end:
            raise TraceError("burst start after end")


class Trace:
    """Ordered packet sequence plus multi-label ground truth.

    Immutable after construction; the packing into parallel numpy arrays
    (int64 timestamps, int8 directions) is an internal representation detail.
    """

    __slots__ = ("timestamps", "directions", "labels", "meta")

    def __init__(
        self,
        timestamps,
        directions,
        labels: LabelVector,
        meta: dict[str, str] | None = None,
    ):
        ts = np.asarray(timestamps, dtype=np.int64)
        ds = np.asarray(directions, dtype=np.int8)
        if ts.shape != ds.shape or ts.ndim != 1:
            raise TraceError("timestamps/directions must be equal-length 1-D arrays")
        if ts.size and not np.isin(ds, (-1, 1)).all():
            raise TraceError("directions must be +1 or -1")
        if ts.size and ts[0] < 0:
            raise TraceError("timestamps must be nonnegative")
        if ts.size > 1 and (np.diff(ts) < 0).any():
            raise UnsortedTraceError("timestamps must be nondecreasing")
        ts.flags.writeable = False
        ds.flags.writeable = False
        self.timestamps = ts
        self.directions = ds
        self.labels = labels
        self.meta = dict(meta or {})

    def __len__(self) -> int:
        return int(self.timestamps.size)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Trace)
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.directions, other.directions)
            and self.labels == other.labels
            and self.meta == other.meta
        )

    def packets(self) -> list[Packet]:
        return [Packet(int(d), int(t)) for d, t in zip(self.directions, self.timestamps)]

    @classmethod
    def from_packets(
        cls,
        packets: Iterable[Packet | tuple[int, int]],
        labels: LabelVector,
        meta: dict[str, str] | None = None,
    ) -> "Trace":
        pkts = list(packets)
        ts = [p[1] for p in pkts]
        ds = [p[0] for p in pkts]
        return cls(ts, ds, labels, meta)


def normalize(trace: Trace) -> Trace:
    """Shift timestamps so the first packet sits at t=0; empty trace unchanged."""
    if len(trace) == 0 or trace.timestamps[0] == 0:
        return trace
    return Trace(
        trace.timestamps - trace.timestamps[0],
        trace.directions,
        trace.labels,
        trace.meta,
    )


def duration(trace: Trace) -> int:
    """Last-packet timestamp of a normalized trace; 0 for empty/singleton traces."""
    if len(trace) < 2:
        return 0
    return int(trace.timestamps[-1])


def segment_bursts(directions, timestamps) -> list[Burst]:
    """Group consecutive same-direction packets into maximal bursts.

    The bursts partition the packet sequence in order; adjacent bursts always
    have opposite directions.
    """
    ds = np.asarray(directions, dtype=np.int8)
    ts = np.asarray(timestamps, dtype=np.int64)
    if ds.size == 0:
        return []
    # boundaries where direction flips; starts include 0, ends include last
    flips = np.flatnonzero(ds[1:] != ds[:-1]) + 1
    starts = np.concatenate(([0], flips))
    ends = np.concatenate((flips, [ds.size]))
    return [
        Burst(
            direction=int(ds[a]),
            size=int(b - a),
            start=int(ts[a]),
            end=int(ts[b - 1]),
        )
        for a, b in zip(starts, ends)
    ]


def trace_bursts(trace: Trace) -> list[Burst]:
    return segment_bursts(trace.directions, trace.timestamps)


def write_trace_csv(trace: Trace, path) -> None:
    """One packet per line: `timestamp_ns,direction`, preceded by the v1 header."""
    lines = [TRACE_HEADER]
    lines.extend(f"{int(t)},{int(d)}" for t, d in zip(trace.timestamps, trace.directions))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trace_csv(path, labels: LabelVector | None = None, meta=None) -> Trace:
    """Parse a v1 trace file; labels live in the dataset manifest, not the file."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().rstrip("\n")
        if header != TRACE_HEADER:
            raise TraceError(f"{path}: bad header {header!r}")
        ts: list[int] = []
        ds: list[int] = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                t_str, d_str = line.split(",")
                ts.append(int(t_str))
                ds.append(int(d_str))
            except ValueError as exc:
                raise TraceError(f"{path}:{lineno}: bad packet line {line!r}") from exc
    if labels is None:
        labels = LabelVector(np.zeros(0, dtype=np.uint8))
    return Trace(ts, ds, labels, meta)
