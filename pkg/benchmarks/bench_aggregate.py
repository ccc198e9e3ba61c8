"""Benchmark the window-aggregation kernels: compiled extension vs pure Python.

Usage: python3 benchmarks/bench_aggregate.py [--traces N] [--repeats R]

Generates synthetic mixtures, runs both backends over the same traces,
verifies bit-identical outputs, and reports per-trace timing.
"""

import argparse
import statistics
import time

import numpy as np

from demux.synth import MixSpec, make_profiles, sample_mixture
from demux.windows import BACKEND, WindowConfig, aggregate


def run(backend: str, traces, cfg: WindowConfig, repeats: int):
    times = []
    outs = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        outs = [aggregate(t, cfg, backend=backend) for t in traces]
        times.append((time.perf_counter() - t0) / len(traces))
    return min(times), outs


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--traces", type=int, default=100)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    profiles = make_profiles(8, master_seed=1)
    spec = MixSpec(tab_count=3, offset_max=500_000_000)
    traces = [sample_mixture(profiles, spec, seed=i) for i in range(args.traces)]
    cfg = WindowConfig()
    n_packets = statistics.mean(len(t) for t in traces)
    print(f"default backend: {BACKEND}; {args.traces} traces, mean {n_packets:.0f} packets")

    t_py, out_py = run("python", traces, cfg, args.repeats)
    print(f"python : {t_py * 1e3:8.3f} ms/trace")
    try:
        t_cy, out_cy = run("cython", traces, cfg, args.repeats)
    except Exception as exc:
        print(f"cython : unavailable ({exc})")
        return 0
    print(f"cython : {t_cy * 1e3:8.3f} ms/trace  ({t_py / t_cy:.1f}x speedup)")
    mismatch = sum(not np.array_equal(a, b) for a, b in zip(out_py, out_cy))
    print(f"outputs: {'bit-identical' if mismatch == 0 else f'{mismatch} MISMATCHES'}")
    return 1 if mismatch else 0


if __name__ == "__main__":
    raise SystemExit(main())
