"""Command-line operator surface: gen, preprocess, train, eval, ablate.

Every subcommand takes --config <path> (JSON) plus --seed and --out where
applicable; any validation failure exits non-zero. DEMUX_WORKERS caps
worker-pool parallelism for gen/preprocess.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import dataset as ds
from . import experiments, trainer
from .windows import WindowConfig


def _load_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def cmd_gen(args) -> int:
    spec = ds.GenSpec.from_dict(_load_json(args.config))
    manifest = ds.generate_dataset(spec, args.seed, args.out)
    print(f"gen: wrote {len(manifest['traces'])} traces to {args.out}")
    return 0


def cmd_preprocess(args) -> int:
    cfg_dict = _load_json(args.config) if args.config else {}
    cfg = WindowConfig(**cfg_dict.get("window", {}))
    index = ds.preprocess_dataset(args.dataset, args.out, cfg)
    print(f"preprocess: {index['written']} written, {index['skipped']} skipped")
    if index["failures"]:
        for failure in index["failures"]:
            print(f"preprocess: FAILED {failure['file']}: {failure['error']}", file=sys.stderr)
        print(f"preprocess: {len(index['failures'])} trace(s) failed", file=sys.stderr)
        return 1
    return 0


def _experiment_spec(args) -> experiments.ExperimentSpec:
    d = _load_json(args.config)
    if args.seed is not None:
        d["seed"] = args.seed
        d.setdefault("train", {})["seed"] = args.seed
    return experiments.ExperimentSpec.from_dict(d)


def cmd_train(args) -> int:
    spec = _experiment_spec(args)
    result = experiments.run_experiment(spec, out_dir=args.out)
    test = result.test
    print(
        f"train: variant={spec.variant} best_epoch={result.train_result.best_epoch} "
        f"test auc={test.auc:.4f} p@k={test.p_at_k:.4f} map@k={test.map_at_k:.4f}"
    )
    return 0


def cmd_eval(args) -> int:
    cfg = _load_json(args.config) if args.config else {}
    result, loss, extra = experiments.evaluate_checkpoint_on_dataset(
        args.checkpoint,
        args.dataset,
        args.features,
        k_policy=cfg.get("k_policy", args.k_policy),
        raw_length=cfg.get("raw_length", 4096),
        input_length=cfg.get("input_length", 512),
    )
    if args.out:
        with open(args.out, "w", newline="") as fh:
            experiments.eval_result_to_csv(result, fh, loss=loss)
    print(f"eval: auc={result.auc:.4f} p@k={result.p_at_k:.4f} map@k={result.map_at_k:.4f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_json(args.config)
    cells = cfg.pop("cells")
    base = cfg
    if args.seed is not None:
        base["seed"] = args.seed
        base.setdefault("train", {})["seed"] = args.seed
    base_spec = experiments.ExperimentSpec.from_dict(base)
    rows, _ = experiments.run_ablation(base_spec, cells, out_dir=args.out)
    failed = [r for r in rows if r["status"] != "ok"]
    for row in rows:
        print(
            f"ablate: {row['variant']:<20} status={row['status']} "
            f"auc={row['auc']} p@k={row['p_at_k']}"
        )
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="demux", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("preprocess", help="window-aggregate a dataset into DMX1 tensors")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("train", help="train an experiment variant")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--features", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--k-policy", default="true", help='"true", "none", or a fixed integer')
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run a variant comparison matrix")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError) as exc:
        print(f"demux {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
