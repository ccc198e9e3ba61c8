"""Deterministic synthetic trace generation.

Stands in for crawled Tor datasets: each monitored class gets a generative
profile (burst-size distributions, request/response gaps, a coarse periodic
loading rhythm and a per-object size trajectory), single-tab traces are
sampled from profiles, and multi-tab traces are built by temporal
superposition of single-tab traces.

Class parameters are stratified across profiles (independently shuffled
strata per parameter axis) so that any two classes are statistically
distinguishable regardless of the master seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .trace import MS, SEC, LabelVector, Trace, normalize


class SynthError(ValueError):
    pass


def _rng(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(master_seed, spawn_key=key)))


@dataclass(frozen=True)
class SiteProfile:
    class_id: int
    num_monitored: int  # label-universe size M; class_id >= M means unmonitored
    object_count_range: tuple[int, int]
    # discrete burst-size distributions: size = 1 + NegBinomial(r, p)
    outgoing_burst_mean: float
    outgoing_burst_r: float
    incoming_burst_mean: float
    incoming_burst_r: float
    # response-delay distribution: lognormal, parameterized by median (ns) and sigma
    gap_median_ns: float
    gap_sigma: float
    # coarse loading cadence
    rhythm_period: int  # ns between successive object loads
    # per-object multiplicative trajectory of incoming burst size
    traj_amp: float
    traj_period: float  # objects per cycle
    traj_phase: float
    # intra-burst packet spacing (exponential mean, ns)
    intra_gap_ns: float

    def trajectory(self, index: int) -> float:
        return 1.0 + self.traj_amp * math.sin(2.0 * math.pi * (index / self.traj_period + self.traj_phase))

    def expected_incoming_mean(self) -> float:
        """Exact mean incoming burst size over object index and object count."""
        lo, hi = self.object_count_range
        total = 0.0
        weight = 0
        for n in range(lo, hi + 1):
            for i in range(n):
                total += 1.0 + (self.incoming_burst_mean - 1.0) * self.trajectory(i)
                weight += 1
        return total / weight

    @property
    def monitored(self) -> bool:
        return self.class_id < self.num_monitored

    def labels(self) -> LabelVector:
        bits = np.zeros(self.num_monitored, dtype=np.uint8)
        if self.monitored:
            bits[self.class_id] = 1
        return LabelVector(bits)


@dataclass(frozen=True)
class MixSpec:
    tab_count: int
    offset_max: int  # ns, max stagger between tab starts
    open_world: bool = False

    def __post_init__(self):
        if self.tab_count < 1:
            raise SynthError("tab_count must be >= 1")
        if self.offset_max < 0:
            raise SynthError("offset_max must be >= 0")


# stratum endpoints per parameter axis (log scale where noted)
_IN_MEAN_RANGE = (8.0, 24.0)  # log
_OUT_MEAN_RANGE = (2.0, 5.0)  # log
_GAP_MEDIAN_RANGE = (2.5 * MS, 4.0 * MS)  # log
_RHYTHM_RANGE = (100 * MS, 140 * MS)  # log
_TRAJ_PERIOD_RANGE = (20.0, 60.0)


def _strata(rng: np.random.Generator, n: int, lo: float, hi: float, log: bool = True) -> np.ndarray:
    """n values spread over [lo, hi], one per shuffled stratum, jittered within it."""
    edges = np.linspace(0.0, 1.0, n + 1)
    u = edges[:-1] + rng.random(n) * (1.0 / n)
    rng.shuffle(u)
    if log:
        return np.exp(np.log(lo) + u * (math.log(hi) - math.log(lo)))
    return lo + u * (hi - lo)


def make_profiles(num_classes: int, master_seed: int, unmonitored: int = 0) -> list[SiteProfile]:
    """Build `num_classes + unmonitored` deterministic profiles.

    Profiles with class_id >= num_classes model open-world unmonitored sites
    and carry all-zero label vectors.
    """
    if num_classes < 1:
        raise SynthError("num_classes must be >= 1")
    n = num_classes + unmonitored
    rng = _rng(master_seed, 0x50)  # profile parameter stream
    in_means = _strata(rng, n, *_IN_MEAN_RANGE)
    out_means = _strata(rng, n, *_OUT_MEAN_RANGE)
    gap_medians = _strata(rng, n, *_GAP_MEDIAN_RANGE)
    rhythms = _strata(rng, n, *_RHYTHM_RANGE)
    traj_periods = _strata(rng, n, *_TRAJ_PERIOD_RANGE)
    traj_phases = _strata(rng, n, 0.0, 1.0, log=False)
    profiles = []
    for cid in range(n):
        lo = int(rng.integers(26, 34))
        hi = lo + int(rng.integers(10, 18))
        profiles.append(
            SiteProfile(
                class_id=cid,
                num_monitored=num_classes,
                object_count_range=(lo, hi),
                outgoing_burst_mean=float(out_means[cid]),
                outgoing_burst_r=float(rng.uniform(3.0, 8.0)),
                incoming_burst_mean=float(in_means[cid]),
                incoming_burst_r=float(rng.uniform(6.0, 12.0)),
                gap_median_ns=float(gap_medians[cid]),
                gap_sigma=float(rng.uniform(0.2, 0.35)),
                rhythm_period=int(rhythms[cid]),
                traj_amp=float(rng.uniform(0.7, 0.95)),
                traj_period=float(traj_periods[cid]),
                traj_phase=float(traj_phases[cid]),
                intra_gap_ns=float(rng.uniform(0.15 * MS, 0.45 * MS)),
            )
        )
    return profiles


def _nb_size(rng: np.random.Generator, mean: float, r: float) -> int:
    """Burst size = 1 + NegBinomial(r, p) with the requested mean (>= 1)."""
    excess = max(mean - 1.0, 1e-9)
    p = r / (r + excess)
    return 1 + int(rng.negative_binomial(r, p))


def sample_trace(profile: SiteProfile, seed: int) -> Trace:
    """Sample one normalized single-tab trace from a site profile.

    Alternates outgoing request bursts and incoming response bursts, one pair
    per page object, with objects paced by the profile's loading rhythm.
    """
    rng = _rng(seed, profile.class_id, 0x7)
    lo, hi = profile.object_count_range
    n_obj = int(rng.integers(lo, hi + 1))
    ts: list[float] = []
    ds: list[int] = []
    t = 0.0
    for i in range(n_obj):
        obj_start = t
        out_size = _nb_size(rng, profile.outgoing_burst_mean, profile.outgoing_burst_r)
        for _ in range(out_size):
            ts.append(t)
            ds.append(1)
            t += rng.exponential(profile.intra_gap_ns)
        # request -> response gap
        t += profile.gap_median_ns * math.exp(rng.normal(0.0, profile.gap_sigma))
        in_mean = 1.0 + (profile.incoming_burst_mean - 1.0) * profile.trajectory(i)
        in_size = _nb_size(rng, in_mean, profile.incoming_burst_r)
        for _ in range(in_size):
            ts.append(t)
            ds.append(-1)
            t += rng.exponential(profile.intra_gap_ns)
        # advance to next object on the coarse rhythm, never moving backwards
        next_start = obj_start + profile.rhythm_period * math.exp(rng.normal(0.0, 0.15))
        t = max(t + 0.05 * MS, next_start)
    arr = np.asarray(ts, dtype=np.float64)
    arr = np.maximum.accumulate(arr)  # guard against float rounding
    trace = Trace(
        np.round(arr).astype(np.int64),
        np.asarray(ds, dtype=np.int8),
        profile.labels(),
        {"generator": "synth-v1", "class_id": str(profile.class_id), "seed": str(seed)},
    )
    return normalize(trace)


def mix_traces(traces: list[Trace], spec: MixSpec, seed: int) -> Trace:
    """Superimpose single-tab traces with independent uniform start offsets."""
    if not traces:
        raise SynthError("mix_traces needs at least one input trace")
    rng = _rng(seed, 0x31)
    offsets = rng.integers(0, spec.offset_max + 1, size=len(traces))
    all_ts = np.concatenate([t.timestamps + int(o) for t, o in zip(traces, offsets)])
    all_ds = np.concatenate([t.directions for t in traces])
    order = np.argsort(all_ts, kind="stable")
    labels = traces[0].labels
    for t in traces[1:]:
        labels = labels.union(t.labels)
    meta = {"generator": "synth-v1", "tab_count": str(len(traces))}
    return normalize(Trace(all_ts[order], all_ds[order], labels, meta))


def sample_mixture(
    profiles: list[SiteProfile],
    spec: MixSpec,
    seed: int,
    tab_transform=None,
) -> Trace:
    """Sample a closed- or open-world multi-tab mixture.

    Closed world: `tab_count` distinct monitored classes. Open world: one tab
    is replaced by an unmonitored profile (class_id >= M), so the label vector
    has popcount `tab_count - 1`. `tab_transform(trace, seed)` is applied to
    each single-tab trace before mixing (defense application point).
    """
    monitored = [p for p in profiles if p.monitored]
    unmonitored = [p for p in profiles if not p.monitored]
    if spec.tab_count > len(monitored):
        raise SynthError("tab_count exceeds monitored class count")
    if spec.open_world and not unmonitored:
        raise SynthError("open-world mixing requires unmonitored profiles")
    rng = _rng(seed, 0x11)
    n_monitored = spec.tab_count - 1 if spec.open_world else spec.tab_count
    chosen_idx = rng.choice(len(monitored), size=n_monitored, replace=False)
    chosen = [monitored[int(i)] for i in chosen_idx]
    if spec.open_world:
        chosen.append(unmonitored[int(rng.integers(len(unmonitored)))])
    tabs = [sample_trace(p, int(rng.integers(0, 2**32))) for p in chosen]
    if tab_transform is not None:
        tabs = [tab_transform(t, int(rng.integers(0, 2**32))) for t in tabs]
    mixed = mix_traces(tabs, spec, int(rng.integers(0, 2**32)))
    mixed.meta["open_world"] = "1" if spec.open_world else "0"
    return mixed
