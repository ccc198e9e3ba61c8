"""Website-fingerprinting defense transforms applied to single-tab traces.

All three transforms preserve the original packets bit-exactly: the padding
defenses only add dummy packets, and TrafficSliver only partitions packets
across paths. WTF-PAD here is a documented simplification of the original
adaptive-padding state machine: dummy packets are injected probabilistically
into inter-packet gaps that exceed a configured threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .trace import SEC, LabelVector, Trace, normalize


class DefenseError(ValueError):
    pass


WTFPAD = "wtfpad"
FRONT = "front"
TRAFFICSLIVER = "trafficsliver"


@dataclass(frozen=True)
class DefenseConfig:
    kind: str
    seed: int = 0
    # wtf-pad (simplified threshold-gap variant)
    wtfpad_gap_threshold: int = 50_000_000  # ns
    wtfpad_dummy_prob: float = 0.9
    # front; sigma range in seconds
    front_max_dummies: int = 2500
    front_sigma_range: tuple[float, float] = (1.0, 14.0)
    # trafficsliver
    sliver_paths: int = 3
    sliver_weights: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in (WTFPAD, FRONT, TRAFFICSLIVER):
            raise DefenseError(f"unknown defense kind {self.kind!r}")
        if not 0.0 <= self.wtfpad_dummy_prob <= 1.0:
            raise DefenseError("wtfpad_dummy_prob must be in [0, 1]")
        if self.front_max_dummies < 0:
            raise DefenseError("front_max_dummies must be >= 0")
        if self.sliver_paths < 1:
            raise DefenseError("sliver_paths must be >= 1")
        weights = self.sliver_weights
        if not weights:
            weights = tuple(1.0 / self.sliver_paths for _ in range(self.sliver_paths))
            object.__setattr__(self, "sliver_weights", weights)
        if len(weights) != self.sliver_paths:
            raise DefenseError("sliver_weights length must equal sliver_paths")
        if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-9:
            raise DefenseError("sliver_weights must be nonnegative and sum to 1")


def _rng(cfg: DefenseConfig, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed, spawn_key=key)))


def _merge_dummies(trace: Trace, dummy_ts: np.ndarray, dummy_ds: np.ndarray, tag: str) -> Trace:
    ts = np.concatenate([trace.timestamps, dummy_ts.astype(np.int64)])
    ds = np.concatenate([trace.directions, dummy_ds.astype(np.int8)])
    order = np.argsort(ts, kind="stable")
    meta = dict(trace.meta)
    meta["defense"] = tag
    return Trace(ts[order], ds[order], trace.labels, meta)


def apply_wtfpad(trace: Trace, cfg: DefenseConfig) -> Trace:
    """Insert one dummy into each over-threshold gap with configured probability."""
    rng = _rng(cfg, 0x1)
    ts = trace.timestamps
    if len(trace) < 2:
        out = Trace(ts, trace.directions, trace.labels, dict(trace.meta, defense=WTFPAD))
        return out
    gaps = np.diff(ts)
    candidates = np.flatnonzero(gaps > cfg.wtfpad_gap_threshold)
    dummy_ts = []
    for i in candidates:
        if rng.random() < cfg.wtfpad_dummy_prob:
            lo, hi = int(ts[i]) + 1, int(ts[i + 1])  # strictly inside the gap
            if lo < hi:
                dummy_ts.append(int(rng.integers(lo, hi)))
    n = len(dummy_ts)
    dummy_ds = rng.choice(np.asarray([-1, 1], dtype=np.int8), size=n)
    return _merge_dummies(trace, np.asarray(dummy_ts, dtype=np.int64), dummy_ds, WTFPAD)


def apply_front(trace: Trace, cfg: DefenseConfig) -> Trace:
    """Front-load Rayleigh-distributed dummies; original packets untouched."""
    rng = _rng(cfg, 0x2)
    if cfg.front_max_dummies == 0:
        return Trace(trace.timestamps, trace.directions, trace.labels, dict(trace.meta, defense=FRONT))
    n_dummies = int(rng.integers(1, cfg.front_max_dummies + 1))
    sigma = float(rng.uniform(*cfg.front_sigma_range))
    times_s = rng.rayleigh(sigma, size=n_dummies)
    dummy_ts = np.round(times_s * SEC).astype(np.int64)
    dummy_ds = rng.choice(np.asarray([-1, 1], dtype=np.int8), size=n_dummies)
    out = _merge_dummies(trace, dummy_ts, dummy_ds, FRONT)
    out.meta["front_sigma"] = repr(sigma)
    return out


def apply_trafficsliver(trace: Trace, cfg: DefenseConfig) -> list[Trace]:
    """Route each packet independently to one of m paths.

    Each output is an order-preserving subsequence with original timestamps,
    so the multiset union of the outputs reconstructs the input exactly.
    """
    rng = _rng(cfg, 0x3)
    m = cfg.sliver_paths
    assignment = rng.choice(m, size=len(trace), p=np.asarray(cfg.sliver_weights))
    outs = []
    for path in range(m):
        mask = assignment == path
        meta = dict(trace.meta, defense=TRAFFICSLIVER, sliver_path=str(path))
        outs.append(Trace(trace.timestamps[mask], trace.directions[mask], trace.labels, meta))
    return outs


def apply_defense(trace: Trace, cfg: DefenseConfig) -> Trace:
    """Attacker-side view of a defended trace (one observed sliver path)."""
    if cfg.kind == WTFPAD:
        return apply_wtfpad(trace, cfg)
    if cfg.kind == FRONT:
        return apply_front(trace, cfg)
    observed = _rng(cfg, 0x4).integers(cfg.sliver_paths)
    return normalize(apply_trafficsliver(trace, cfg)[int(observed)])


def per_trace_config(cfg: DefenseConfig, trace_seed: int) -> DefenseConfig:
    """Derive an independent defense RNG stream for one trace."""
    mixed = int(np.random.SeedSequence([cfg.seed, trace_seed]).generate_state(1)[0])
    return replace(cfg, seed=mixed)
