import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from demux.trace import (
    MS,
    Burst,
    LabelVector,
    Packet,
    Trace,
    TraceError,
    UnsortedTraceError,
    duration,
    normalize,
    read_trace_csv,
    segment_bursts,
    trace_bursts,
    write_trace_csv,
)


def mk(ts, ds, labels=(1, 0)):
    return Trace(ts, ds, LabelVector(np.array(labels, dtype=np.uint8)))


class TestNormalize:
    def test_origin_shift(self):
        t = mk([5 * MS, int(7.5 * MS)], [1, -1])
        out = normalize(t)
        assert out.timestamps.tolist() == [0, int(2.5 * MS)]
        assert out.directions.tolist() == [1, -1]

    def test_empty(self):
        t = mk([], [])
        assert normalize(t) == t

    def test_already_normalized_identity(self):
        t = mk([0, 3 * MS], [1, 1])
        assert normalize(t) == t

    def test_unsorted_rejected(self):
        with pytest.raises(UnsortedTraceError):
            mk([5, 3], [1, 1])


class TestSegmentBursts:
    def test_example(self):
        bursts = segment_bursts([1, 1, -1, 1], [0, 1, 2, 3])
        assert [(b.direction, b.size) for b in bursts] == [(1, 2), (-1, 1), (1, 1)]

    def test_empty(self):
        assert segment_bursts([], []) == []

    def test_single_run(self):
        bursts = segment_bursts([-1, -1, -1], [0, 5, 9])
        assert [(b.direction, b.size, b.start, b.end) for b in bursts] == [(-1, 3, 0, 9)]

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.sampled_from([-1, 1]), max_size=10_000))
    def test_flatten_roundtrip(self, dirs):
        ts = np.arange(len(dirs), dtype=np.int64)
        bursts = segment_bursts(dirs, ts)
        flattened = [b.direction for b in bursts for _ in range(b.size)]
        assert flattened == dirs
        assert sum(b.size for b in bursts) == len(dirs)
        for a, b in zip(bursts, bursts[1:]):
            assert a.direction != b.direction


def test_duration_cases():
    assert duration(mk([0, int(2.5 * MS)], [1, -1])) == int(2.5 * MS)
    assert duration(mk([0], [1])) == 0
    assert duration(mk([], [])) == 0


def test_burst_invariants():
    with pytest.raises(TraceError):
        Burst(direction=1, size=0, start=0, end=0)
    with pytest.raises(TraceError):
        Burst(direction=1, size=1, start=5, end=3)


def test_trace_validation():
    with pytest.raises(TraceError):
        mk([0, 1], [1, 2])
    with pytest.raises(TraceError):
        mk([-5, 1], [1, 1])
    with pytest.raises(TraceError):
        LabelVector(np.array([0, 2]))


def test_packets_view():
    t = mk([0, 7], [1, -1])
    assert t.packets() == [Packet(1, 0), Packet(-1, 7)]
    assert Trace.from_packets(t.packets(), t.labels) == t


class TestCsvRoundTrip:
    def test_byte_identical(self, tmp_path):
        t = mk([0, 1234, 5 * MS], [1, -1, -1])
        p1 = tmp_path / "a.csv"
        p2 = tmp_path / "b.csv"
        write_trace_csv(t, p1)
        parsed = read_trace_csv(p1, labels=t.labels)
        assert parsed.timestamps.tolist() == t.timestamps.tolist()
        assert parsed.directions.tolist() == t.directions.tolist()
        write_trace_csv(parsed, p2)
        assert p1.read_bytes() == p2.read_bytes()

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from([-1, 1]), st.integers(0, 10**12)), max_size=200))
    def test_fuzzed_roundtrip(self, pkts):
        import tempfile
        from pathlib import Path

        ts = sorted(t for _, t in pkts)
        ds = [d for d, _ in pkts]
        t = mk(ts, ds, labels=(1,))
        tmp = tempfile.mkdtemp()
        path = Path(tmp) / "t.csv"
        write_trace_csv(t, path)
        parsed = read_trace_csv(path, labels=t.labels)
        write_trace_csv(parsed, path)
        again = read_trace_csv(path, labels=t.labels)
        assert np.array_equal(parsed.timestamps, again.timestamps)
        assert np.array_equal(parsed.directions, again.directions)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("nah\n1,1\n")
        with pytest.raises(TraceError):
            read_trace_csv(path)

    def test_bad_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("# demux-trace v1\n1,1\nnope\n")
        with pytest.raises(TraceError):
            read_trace_csv(path)


def test_trace_bursts_sum():
    t = mk([0, 1, 2, 3, 4], [1, 1, -1, -1, 1], labels=(1,))
    assert sum(b.size for b in trace_bursts(t)) == len(t)
