"""Experiment specs: variant resolution, training runs, evaluation, ablation."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from . import dataset as ds
from . import metrics, trainer
from .model import (
    BaselineConfig,
    ModelConfig,
    build_model,
    load_checkpoint,
    save_checkpoint,
    toy_config,
)

VARIANTS = (
    "full",
    "no_bm",
    "kernel3",
    "kernel5",
    "kernel7",
    "no_transformer",
    "baseline_df",
    "baseline_df_plus_bm",
)

METRIC_LOG_FIELDS = ("epoch", "split", "loss", "auc", "p_at_k", "map_at_k")


class ExperimentError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    variant: str
    dataset_dir: str  # generated traces (raw-direction variants read these)
    features_dir: str  # preprocessed DMX1 tensors
    classes: int
    positional: str = "rope"
    aggregation: str = "upproj_mean"
    input_length: int = 512  # windows per feature tensor after pad/truncate
    raw_length: int = 4096  # packets per raw direction sequence
    scale: str = "toy"  # toy | paper
    train: trainer.TrainConfig = field(default_factory=trainer.toy_train_config)
    seed: int = 2025

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ExperimentError(f"unknown variant {self.variant!r}")
        if self.scale not in ("toy", "paper"):
            raise ExperimentError(f"unknown scale {self.scale!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        train_cfg = trainer.toy_train_config(**d.pop("train", {}))
        return cls(train=train_cfg, **d)

    def uses_raw_input(self) -> bool:
        return self.variant in ("no_bm", "baseline_df")


def resolve_model_config(spec: ExperimentSpec) -> ModelConfig | BaselineConfig:
    """Map an experiment variant to exactly one model configuration."""
    if spec.variant == "baseline_df":
        return BaselineConfig(classes=spec.classes, input_channels=1)
    if spec.variant == "baseline_df_plus_bm":
        return BaselineConfig(classes=spec.classes, input_channels=8)

    overrides = dict(
        positional=spec.positional,
        aggregation=spec.aggregation,
        input_length=spec.input_length,
    )
    if spec.variant == "no_bm":
        overrides["raw_input"] = True
        overrides["input_length"] = spec.raw_length
    elif spec.variant in ("kernel3", "kernel5", "kernel7"):
        overrides["branch_kernels"] = (int(spec.variant[-1]),)
    elif spec.variant == "no_transformer":
        overrides["stage1_layers"] = 0
        overrides["stage2_layers"] = 0

    if spec.scale == "paper":
        base = dict(classes=spec.classes)
        base.update(overrides)
        return ModelConfig(**base)
    return toy_config(spec.classes, **overrides)


def load_split_data(spec: ExperimentSpec):
    """Load the dataset a variant consumes and apply the fixed 8:1:1 split."""
    if spec.uses_raw_input():
        x, y, tabs = ds.load_raw_dataset(spec.dataset_dir, spec.raw_length)
    else:
        x, y, tabs = ds.load_feature_dataset(spec.features_dir, spec.input_length)
    if y.shape[1] != spec.classes:
        raise ExperimentError(
            f"dataset has {y.shape[1]} classes but experiment expects {spec.classes}"
        )
    x = torch.from_numpy(x)
    y = torch.from_numpy(y)
    tr, va, te = trainer.split_indices(len(x), seed=spec.seed)
    return {
        "train": (x[tr], y[tr]),
        "val": (x[va], y[va]),
        "test": (x[te], y[te]),
    }


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    train_result: trainer.TrainResult
    test: metrics.EvalResult
    log: list[dict]


def run_experiment(spec: ExperimentSpec, out_dir: str | None = None) -> ExperimentResult:
    """Train the resolved variant, evaluate the best checkpoint on the test split."""
    data = load_split_data(spec)
    cfg = resolve_model_config(spec)
    model = build_model(cfg, seed=spec.seed)
    result = trainer.train(model, data["train"], data["val"], spec.train)
    model.load_state_dict(result.best_state)
    test_loss, test_metrics = evaluate_checkpointed(model, data["test"])
    log = list(result.log)
    log.append(
        {
            "epoch": result.best_epoch,
            "split": "test",
            "loss": test_loss,
            "auc": test_metrics.auc,
            "p_at_k": test_metrics.p_at_k,
            "map_at_k": test_metrics.map_at_k,
        }
    )
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        save_checkpoint(
            model,
            os.path.join(out_dir, "checkpoint.dmxc"),
            extra={"variant": spec.variant, "seed": spec.seed, "best_epoch": result.best_epoch},
        )
        with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as fh:
            write_metric_log(log, fh)
    return ExperimentResult(spec=spec, train_result=result, test=test_metrics, log=log)


def evaluate_checkpointed(model, data, k=None):
    x, y = data
    return trainer.evaluate_model(model, x, y, k=k)


def write_metric_log(log: list[dict], fh) -> None:
    writer = csv.DictWriter(fh, fieldnames=METRIC_LOG_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in log:
        writer.writerow({k: _fmt(row.get(k, "")) for k in METRIC_LOG_FIELDS})


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


# --- evaluation result CSV (lossless round trip) ---------------------------

EVAL_FIELDS = ("row", "instance", "k", "loss", "auc", "p_at_k", "map_at_k", "skipped")


def eval_result_to_csv(result: metrics.EvalResult, fh, loss: float | None = None) -> None:
    writer = csv.DictWriter(fh, fieldnames=EVAL_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerow(
        {
            "row": "aggregate",
            "instance": "",
            "k": result.k_used,
            "loss": "" if loss is None else repr(loss),
            "auc": repr(result.auc),
            "p_at_k": repr(result.p_at_k),
            "map_at_k": repr(result.map_at_k),
            "skipped": ";".join(map(str, result.skipped_sites)),
        }
    )
    for row in result.per_instance:
        writer.writerow(
            {
                "row": "instance",
                "instance": row["instance"],
                "k": row["k"],
                "loss": "",
                "auc": "",
                "p_at_k": repr(row["p_at_k"]),
                "map_at_k": repr(row["map_at_k"]),
                "skipped": "",
            }
        )


def eval_result_from_csv(fh) -> metrics.EvalResult:
    reader = csv.DictReader(fh)
    agg = None
    per_instance = []
    for row in reader:
        if row["row"] == "aggregate":
            agg = metrics.EvalResult(
                auc=float(row["auc"]),
                p_at_k=float(row["p_at_k"]),
                map_at_k=float(row["map_at_k"]),
                k_used=int(row["k"]),
                skipped_sites=[int(s) for s in row["skipped"].split(";") if s],
            )
        else:
            per_instance.append(
                {
                    "instance": int(row["instance"]),
                    "k": int(row["k"]),
                    "p_at_k": float(row["p_at_k"]),
                    "map_at_k": float(row["map_at_k"]),
                }
            )
    if agg is None:
        raise ExperimentError("eval CSV has no aggregate row")
    agg.per_instance = per_instance
    return agg


def evaluate_checkpoint_on_dataset(
    checkpoint_path: str,
    dataset_dir: str,
    features_dir: str | None,
    k_policy: str = "true",
    raw_length: int = 4096,
    input_length: int = 512,
):
    """Cross-configuration evaluation of a stored checkpoint.

    k_policy: "true" uses each instance's label count, "none" reports AUC
    only, an integer string fixes K.
    """
    model, extra = load_checkpoint(checkpoint_path)
    raw = getattr(model.cfg, "raw_input", False) or getattr(model.cfg, "input_channels", 8) == 1
    if raw:
        x, y, _ = ds.load_raw_dataset(dataset_dir, raw_length)
    else:
        if features_dir is None:
            raise ExperimentError("checkpoint consumes feature tensors; --features required")
        x, y, _ = ds.load_feature_dataset(features_dir, input_length)
    if y.shape[1] != model.cfg.classes:
        raise ExperimentError(
            f"checkpoint expects {model.cfg.classes} classes, dataset has {y.shape[1]}"
        )
    x = torch.from_numpy(x)
    yt = torch.from_numpy(y)
    with torch.no_grad():
        model.eval()
        preds = torch.cat([model(x[i : i + 256]) for i in range(0, len(x), 256)])
    loss = float(trainer.bce_loss(preds, yt))
    labels = y.astype(np.int64)
    if k_policy == "none":
        auc, skipped = metrics.macro_auc(preds.numpy(), labels)
        result = metrics.EvalResult(auc=auc, p_at_k=float("nan"), map_at_k=float("nan"),
                                    k_used=0, skipped_sites=skipped)
    else:
        k = None if k_policy == "true" else int(k_policy)
        result = metrics.evaluate(preds.numpy(), labels, k=k, per_instance=True)
    return result, loss, extra


# --- ablation matrix --------------------------------------------------------

ABLATE_FIELDS = (
    "variant", "positional", "aggregation", "uses_bm", "seed", "status",
    "auc", "p_at_k", "map_at_k", "error",
)


def run_ablation(base_spec: ExperimentSpec, cells: list[dict], out_dir: str | None = None):
    """Run each matrix cell under identical data and seeds; one row per cell.

    A failed cell is marked and the run continues. `uses_bm` tags the
    baseline-vs-BM pairing for plug-and-play plots.
    """
    rows = []
    results = {}
    for cell in cells:
        spec = replace(base_spec, **cell)
        row = {
            "variant": spec.variant,
            "positional": spec.positional,
            "aggregation": spec.aggregation,
            "uses_bm": 0 if spec.uses_raw_input() else 1,
            "seed": spec.seed,
            "status": "ok",
            "auc": "",
            "p_at_k": "",
            "map_at_k": "",
            "error": "",
        }
        try:
            cell_out = None
            if out_dir is not None:
                cell_out = os.path.join(out_dir, _cell_name(spec))
            result = run_experiment(spec, out_dir=cell_out)
            row["auc"] = repr(result.test.auc)
            row["p_at_k"] = repr(result.test.p_at_k)
            row["map_at_k"] = repr(result.test.map_at_k)
            results[_cell_name(spec)] = result
        except Exception as exc:  # cell isolation: log and continue
            row["status"] = "failed"
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "ablation.csv"), "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=ABLATE_FIELDS, lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    return rows, results


def _cell_name(spec: ExperimentSpec) -> str:
    return f"{spec.variant}_{spec.positional}_{spec.aggregation}_s{spec.seed}"
