"""Dataset generation, preprocessing, and loading.

On-disk layout of a generated dataset:

    <dir>/manifest.json            control-plane metadata + file index
    <dir>/traces/t_<cfg>_<i>.csv   one v1 trace file per mixture

Preprocessing writes one DMX1 tensor per trace plus an index:

    <out>/index.json
    <out>/tensors/t_<cfg>_<i>.dmx
"""

from __future__ import annotations

import json
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import defenses, synth, trace as tracemod, windows
from .trace import LabelVector, Trace, read_trace_csv, write_trace_csv
from .windows import WindowConfig, aggregate
from .windows.tensorio import read_tensor, write_tensor

MANIFEST_VERSION = 1
CLOSED_WORLD = "closed_world"
OPEN_WORLD = "open_world"


class DatasetError(ValueError):
    pass


def worker_count() -> int:
    """Bounded worker pool size; DEMUX_WORKERS caps parallelism."""
    env = os.environ.get("DEMUX_WORKERS")
    if env:
        return max(1, int(env))
    return 1


def fnv1a64(data: bytes) -> str:
    """64-bit FNV-1a content hash (non-cryptographic, idempotence checks only)."""
    h = 0xCBF29CE484222325
    for byte in data:
        h = ((h ^ byte) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return f"{h:016x}"


@dataclass(frozen=True)
class GenSpec:
    num_classes: int
    tab_counts: tuple[int, ...]
    traces_per_config: int
    mode: str = CLOSED_WORLD
    offset_max_ms: float = 1000.0
    unmonitored_sites: int = 0
    defense: defenses.DefenseConfig | None = None

    def __post_init__(self):
        if self.num_classes < 1:
            raise DatasetError("num_classes must be >= 1")
        if self.mode not in (CLOSED_WORLD, OPEN_WORLD):
            raise DatasetError(f"unknown mode {self.mode!r}")
        if self.mode == OPEN_WORLD and self.unmonitored_sites < 1:
            raise DatasetError("open_world generation needs unmonitored_sites >= 1")
        if not self.tab_counts or any(t < 1 for t in self.tab_counts):
            raise DatasetError("tab_counts must be nonempty positive integers")
        if self.traces_per_config < 1:
            raise DatasetError("traces_per_config must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "GenSpec":
        d = dict(d)
        defense = d.pop("defense", None)
        if defense:
            defense = defenses.DefenseConfig(
                **{k: tuple(v) if isinstance(v, list) else v for k, v in defense.items()}
            )
        return cls(
            num_classes=d["num_classes"],
            tab_counts=tuple(d["tab_counts"]),
            traces_per_config=d["traces_per_config"],
            mode=d.get("mode", CLOSED_WORLD),
            offset_max_ms=d.get("offset_max_ms", 1000.0),
            unmonitored_sites=d.get("unmonitored_sites", 0),
            defense=defense,
        )


def _gen_one(profiles, spec: GenSpec, tab_count: int, trace_seed: int) -> Trace:
    mix = synth.MixSpec(
        tab_count=tab_count,
        offset_max=int(spec.offset_max_ms * tracemod.MS),
        open_world=spec.mode == OPEN_WORLD,
    )
    tab_transform = None
    if spec.defense is not None:
        base = spec.defense

        def tab_transform(t, s):
            return defenses.apply_defense(t, defenses.per_trace_config(base, s))

    return synth.sample_mixture(profiles, mix, trace_seed, tab_transform=tab_transform)


def generate_dataset(spec: GenSpec, seed: int, out_dir: str) -> dict:
    """Write a deterministic dataset tree; partial output is rolled back."""
    out_dir = os.path.abspath(out_dir)
    tmp_dir = out_dir + ".tmp"
    if os.path.exists(tmp_dir):
        shutil.rmtree(tmp_dir)
    os.makedirs(os.path.join(tmp_dir, "traces"))
    try:
        profiles = synth.make_profiles(spec.num_classes, seed, unmonitored=spec.unmonitored_sites)
        entries = []
        for tab_count in spec.tab_counts:
            for i in range(spec.traces_per_config):
                trace_seed = int(
                    np.random.SeedSequence(seed, spawn_key=(tab_count, i)).generate_state(1)[0]
                )
                trace = _gen_one(profiles, spec, tab_count, trace_seed)
                name = f"traces/t_{tab_count}tab_{i:06d}.csv"
                write_trace_csv(trace, os.path.join(tmp_dir, name))
                entries.append(
                    {
                        "file": name,
                        "labels": trace.labels.indices,
                        "tab_count": tab_count,
                        "meta": trace.meta,
                    }
                )
        manifest = {
            "version": MANIFEST_VERSION,
            "mode": spec.mode,
            "num_classes": spec.num_classes,
            "tab_counts": list(spec.tab_counts),
            "traces_per_config": spec.traces_per_config,
            "offset_max_ms": spec.offset_max_ms,
            "defense": asdict(spec.defense) if spec.defense else None,
            "seeds": {"master": seed},
            "traces": entries,
        }
        with open(os.path.join(tmp_dir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
        if os.path.exists(out_dir):
            shutil.rmtree(out_dir)
        os.replace(tmp_dir, out_dir)
        return manifest
    except BaseException:
        shutil.rmtree(tmp_dir, ignore_errors=True)
        raise


def load_manifest(dataset_dir: str) -> dict:
    path = os.path.join(dataset_dir, "manifest.json")
    if not os.path.exists(path):
        raise DatasetError(f"{dataset_dir}: no manifest.json")
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("version") != MANIFEST_VERSION:
        raise DatasetError(f"{path}: unsupported manifest version")
    return manifest


def _window_cfg_key(cfg: WindowConfig) -> str:
    return f"w={cfg.window};s={cfg.stride};cp={cfg.packet_channels}"


def _preprocess_one(args):
    dataset_dir, out_dir, entry, cfg = args
    src = os.path.join(dataset_dir, entry["file"])
    with open(src, "rb") as fh:
        content = fh.read()
    digest = fnv1a64(content + _window_cfg_key(cfg).encode())
    trace = read_trace_csv(src)
    tensor = aggregate(trace, cfg)
    name = "tensors/" + os.path.splitext(os.path.basename(entry["file"]))[0] + ".dmx"
    write_tensor(tensor, os.path.join(out_dir, name))
    return name, digest


def preprocess_dataset(dataset_dir: str, out_dir: str, cfg: WindowConfig | None = None) -> dict:
    """One DMX1 tensor per trace plus an index pairing tensors with labels.

    Idempotent: entries whose source content hash is unchanged are skipped.
    Corrupt trace files are reported and skipped; the summary lists failures.
    """
    cfg = cfg or WindowConfig()
    manifest = load_manifest(dataset_dir)
    os.makedirs(os.path.join(out_dir, "tensors"), exist_ok=True)
    index_path = os.path.join(out_dir, "index.json")
    previous = {}
    if os.path.exists(index_path):
        with open(index_path) as fh:
            old = json.load(fh)
        if old.get("window_key") == _window_cfg_key(cfg):
            previous = {e["source"]: e for e in old.get("entries", [])}

    entries = []
    failures = []
    written = 0
    skipped = 0
    pending = []
    for entry in manifest["traces"]:
        src = os.path.join(dataset_dir, entry["file"])
        try:
            with open(src, "rb") as fh:
                digest = fnv1a64(fh.read() + _window_cfg_key(cfg).encode())
        except OSError as exc:
            failures.append({"file": entry["file"], "error": str(exc)})
            continue
        prev = previous.get(entry["file"])
        if (
            prev
            and prev["hash"] == digest
            and os.path.exists(os.path.join(out_dir, prev["tensor"]))
        ):
            entries.append(prev)
            skipped += 1
            continue
        pending.append((entry, digest))

    def record(entry, digest, tensor_name):
        entries.append(
            {
                "tensor": tensor_name,
                "source": entry["file"],
                "labels": entry["labels"],
                "tab_count": entry["tab_count"],
                "hash": digest,
            }
        )

    n_workers = worker_count()
    if n_workers > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            futures = [
                pool.submit(_preprocess_one, (dataset_dir, out_dir, e, cfg)) for e, _ in pending
            ]
            for (entry, digest), fut in zip(pending, futures):
                try:
                    tensor_name, _ = fut.result()
                except (tracemod.TraceError, OSError) as exc:
                    failures.append({"file": entry["file"], "error": str(exc)})
                    continue
                record(entry, digest, tensor_name)
    else:
        for entry, digest in pending:
            try:
                tensor_name, _ = _preprocess_one((dataset_dir, out_dir, entry, cfg))
            except (tracemod.TraceError, OSError) as exc:
                failures.append({"file": entry["file"], "error": str(exc)})
                continue
            record(entry, digest, tensor_name)
    written = len(entries) - skipped

    entries.sort(key=lambda e: e["tensor"])
    index = {
        "version": MANIFEST_VERSION,
        "window_key": _window_cfg_key(cfg),
        "window": {
            "window": cfg.window,
            "stride": cfg.stride,
            "packet_channels": cfg.packet_channels,
        },
        "num_classes": manifest["num_classes"],
        "dataset": os.path.abspath(dataset_dir),
        "entries": entries,
        "failures": failures,
        "written": written,
        "skipped": skipped,
    }
    with open(index_path, "w") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)
    return index


def load_index(features_dir: str) -> dict:
    path = os.path.join(features_dir, "index.json")
    if not os.path.exists(path):
        raise DatasetError(f"{features_dir}: no index.json")
    with open(path) as fh:
        return json.load(fh)


def _pad_rows(arr: np.ndarray, length: int) -> np.ndarray:
    if arr.shape[0] >= length:
        return arr[:length]
    out = np.zeros((length, arr.shape[1]), dtype=arr.dtype)
    out[: arr.shape[0]] = arr
    return out


def load_feature_dataset(features_dir: str, input_length: int):
    """(N, input_length, C) float32 tensors and (N, M) labels plus tab counts."""
    index = load_index(features_dir)
    num_classes = index["num_classes"]
    xs, ys, tabs = [], [], []
    for entry in index["entries"]:
        tensor = read_tensor(os.path.join(features_dir, entry["tensor"]))
        xs.append(_pad_rows(tensor, input_length))
        ys.append(LabelVector.from_indices(entry["labels"], num_classes).bits)
        tabs.append(entry["tab_count"])
    return (
        np.stack(xs).astype(np.float32),
        np.stack(ys).astype(np.float32),
        np.asarray(tabs, dtype=np.int64),
    )


def load_raw_dataset(dataset_dir: str, raw_length: int):
    """Raw +/-1 direction sequences truncated / zero-padded to a fixed length."""
    manifest = load_manifest(dataset_dir)
    num_classes = manifest["num_classes"]
    xs, ys, tabs = [], [], []
    for entry in manifest["traces"]:
        trace = read_trace_csv(os.path.join(dataset_dir, entry["file"]))
        seq = trace.directions.astype(np.float32)[:raw_length]
        xs.append(_pad_rows(seq[:, None], raw_length))
        ys.append(LabelVector.from_indices(entry["labels"], num_classes).bits)
        tabs.append(entry["tab_count"])
    return (
        np.stack(xs).astype(np.float32),
        np.stack(ys).astype(np.float32),
        np.asarray(tabs, dtype=np.int64),
    )
