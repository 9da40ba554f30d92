"""Command-line surface: dataset synthesis, training, evaluation, sweeps,
ablations, and retrieval, all emitting CSV artifacts plus a run manifest.

Every command writes only below its --out directory (default: the
GENZSL_OUT environment variable, falling back to the working directory).
A run manifest is written atomically when the command finishes; if the
command fails after producing partial output, the manifest records
status "failed" together with the error. Exit codes: 0 success,
2 validation error, 3 numeric failure, 4 I/O error.

Config files are JSON mirrors of the training configuration. Any key can
also be overridden on the command line with repeated
`--set dotted.key=json-value` flags; the handful of dedicated flags
(--steps, --seed, --lambda, --policy, ...) take precedence over both.
The fully merged snapshot is persisted in the run manifest.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import __version__
from . import dataio as io
from . import evaluation as ev
from . import training as tr
from .errors import DataFormatError, NumericOverflowError, ValidationError

ENV_OUT = "GENZSL_OUT"


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _set_by_path(tree: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = tree
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ValidationError(f"--set path {dotted!r} crosses a non-object key")
    node[keys[-1]] = value


def _load_config(args) -> tr.TrainConfig:
    data: dict = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise DataFormatError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{args.config}: malformed JSON: {exc}") from exc
    for item in getattr(args, "set", None) or []:
        key, _, raw = item.partition("=")
        if not _ or not key:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw  # bare strings are taken literally
        _set_by_path(data, key.strip(), value)
    if getattr(args, "steps", None) is not None:
        data["n_steps"] = args.steps
    if getattr(args, "seed", None) is not None:
        data["seed"] = args.seed
    if getattr(args, "batch_size", None) is not None:
        data["batch_size"] = args.batch_size
    if getattr(args, "policy", None) is not None:
        data["policy"] = args.policy
    if getattr(args, "lam", None) is not None:
        data.setdefault("loss", {})["lambda_creativity"] = args.lam
    if getattr(args, "lambda_grid", None):
        data["lambda_grid"] = args.lambda_grid
    return tr.config_from_dict(data)


class RunContext:
    """Collects output paths and writes the final manifest."""

    def __init__(self, args, command: str):
        self.command = command
        self.out_dir = args.out or os.environ.get(ENV_OUT) or "."
        os.makedirs(self.out_dir, exist_ok=True)
        self.started = time.time()
        self.inputs: list[str] = []
        self.outputs: list[str] = []
        self.config_snapshot: dict = {}
        self.seeds: list[int] = []
        self.extra: dict = {}

    def path(self, name: str) -> str:
        full = os.path.join(self.out_dir, name)
        self.outputs.append(full)
        return full

    def write_manifest(self, status: str, error: str | None = None) -> None:
        manifest = {
            "format": "zsl-run-manifest",
            "version": 1,
            "command": self.command,
            "status": status,
            "config": self.config_snapshot,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": sorted(p for p in set(self.outputs) if os.path.exists(p)),
            "wall_clock_sec": round(time.time() - self.started, 3),
            "toolkit_version": __version__,
        }
        if error:
            manifest["error"] = error
        io._write_json_atomic(os.path.join(self.out_dir, "run_manifest.json"), manifest)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, ctx: RunContext) -> None:
    spec = io.SyntheticSpec(
        k_seen=args.k_seen, k_unseen=args.k_unseen, visual_dim=args.visual_dim,
        semantic_dim=args.semantic_dim, samples_per_class=args.samples_per_class,
        cluster_spread=args.cluster_spread, semantic_noise=args.semantic_noise,
        split_mode=args.split, seed=args.seed,
    )
    ctx.seeds = [args.seed]
    ctx.config_snapshot = {k: getattr(spec, k) for k in (
        "k_seen", "k_unseen", "visual_dim", "semantic_dim", "samples_per_class",
        "cluster_spread", "semantic_noise", "split_mode", "seed")}
    dataset = io.make_synthetic(spec)
    io.save_dataset(dataset, ctx.out_dir)
    ctx.outputs.extend(os.path.join(ctx.out_dir, f"{f}.zsld")
                       for f in io._DATASET_FIELDS)
    ctx.outputs.append(os.path.join(ctx.out_dir, "manifest.json"))
    print(f"wrote synthetic dataset ({dataset.k_seen} seen / {dataset.k_unseen} "
          f"unseen classes, {dataset.split_mode} split) to {ctx.out_dir}")


def cmd_train(args, ctx: RunContext) -> None:
    cfg = _load_config(args)
    ctx.config_snapshot = tr.config_to_dict(cfg)
    ctx.seeds = [cfg.seed]
    ctx.inputs.append(args.data)
    dataset = io.load_dataset(args.data)
    params, history = tr.train(dataset, cfg)

    ckpt_dir = os.path.join(ctx.out_dir, "checkpoint")
    io.save_checkpoint(params, ctx.config_snapshot, ckpt_dir)
    ctx.outputs.append(os.path.join(ckpt_dir, "manifest.json"))
    _write_csv(ctx.path("history.csv"), tr.TrainHistory.CSV_HEADER, history.rows())
    if history.records:
        last = history.records[-1]
        print(f"trained {cfg.n_steps} steps: val_top1={last.val_top1:.4f} "
              f"val_auc={last.val_auc:.4f}")
    else:
        print(f"trained {cfg.n_steps} steps (no evaluation points)")


def _report_rows(report: ev.EvalReport):
    header = ["top1_unseen", "su_auc", "harmonic_mean"]
    row = [report.top1_unseen, report.su_auc, report.harmonic_mean]
    for frac in sorted(report.retrieval_map):
        header.append(f"map_at_{frac}")
        row.append(report.retrieval_map[frac])
    return header, [row]


def cmd_eval(args, ctx: RunContext) -> None:
    ctx.inputs.extend([args.checkpoint, args.data])
    dataset = io.load_dataset(args.data)
    params, snapshot = io.load_checkpoint(args.checkpoint)
    ctx.config_snapshot = snapshot
    seed = args.seed if args.seed is not None else int(snapshot.get("seed", 0))
    ctx.seeds = [seed]
    report = ev.evaluate_model(
        params.generator, dataset, args.n_generate, io.philox(seed, tr.TAG_EVAL),
        metric=args.metric, retrieval_method=args.method)
    header, rows = _report_rows(report)
    _write_csv(ctx.path("eval_report.csv"), header, rows)
    _write_csv(ctx.path("su_curve.csv"), ["seen_acc", "unseen_acc"], report.su_curve)
    print(f"top1_unseen={report.top1_unseen:.4f} su_auc={report.su_auc:.4f} "
          f"harmonic_mean={report.harmonic_mean:.4f}")


def cmd_sweep(args, ctx: RunContext) -> None:
    cfg = _load_config(args)
    seeds = args.seeds if args.seeds else [cfg.seed]
    ctx.config_snapshot = tr.config_to_dict(cfg)
    ctx.seeds = list(seeds)
    ctx.inputs.append(args.data)
    dataset = io.load_dataset(args.data)

    def run_one(seed: int):
        from dataclasses import replace
        return seed, tr.cross_validate(dataset, replace(cfg, seed=seed))

    results = []
    if args.workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_sweep_worker,
                                    [(dataset, cfg, s) for s in seeds]))
    else:
        results = [run_one(s) for s in seeds]

    cell_rows = []
    winner_rows = []
    for seed, res in results:
        for lam in cfg.lambda_grid:
            curve = res.curves[lam]
            best_auc = max(a for _, a, _ in curve)
            best_step = min(s for s, a, _ in curve if a == best_auc)
            cell_rows.append((seed, lam, best_auc, best_step,
                              lam == res.best_lambda))
        winner_rows.append((seed, res.best_lambda, res.best_step, res.best_metric))
    _write_csv(ctx.path("sweep.csv"),
               ["seed", "lambda", "best_val_auc", "best_step", "winner"], cell_rows)
    _write_csv(ctx.path("winners.csv"),
               ["seed", "best_lambda", "best_step", "best_val_auc"], winner_rows)
    for seed, lam, step, metric in winner_rows:
        print(f"seed {seed}: best lambda {lam} at step {step} "
              f"(val_auc {metric:.4f})")


def _sweep_worker(payload):
    from dataclasses import replace
    dataset, cfg, seed = payload
    return seed, tr.cross_validate(dataset, replace(cfg, seed=seed))


def cmd_ablate(args, ctx: RunContext) -> None:
    cfg = _load_config(args)
    seeds = args.seeds if args.seeds else [cfg.seed]
    ctx.config_snapshot = tr.config_to_dict(cfg)
    ctx.seeds = list(seeds)
    ctx.inputs.append(args.data)
    dataset = io.load_dataset(args.data)
    rows = tr.ablate(dataset, cfg, args.suite, seeds=seeds)
    _write_csv(ctx.path("ablation.csv"),
               ["row", "top1_mean", "top1_std", "auc_mean", "auc_std",
                "hm_mean", "hm_std"],
               [(r.label, r.top1_mean, r.top1_std, r.auc_mean, r.auc_std,
                 r.hm_mean, r.hm_std) for r in rows])
    for r in rows:
        print(f"{r.label}: top1 {r.top1_mean:.4f}±{r.top1_std:.4f} "
              f"auc {r.auc_mean:.4f}±{r.auc_std:.4f}")


def cmd_retrieve(args, ctx: RunContext) -> None:
    ctx.inputs.extend([args.checkpoint, args.data])
    dataset = io.load_dataset(args.data)
    params, snapshot = io.load_checkpoint(args.checkpoint)
    ctx.config_snapshot = snapshot
    seed = args.seed if args.seed is not None else int(snapshot.get("seed", 0))
    ctx.seeds = [seed]
    unseen_ids = dataset.k_seen + np.arange(dataset.k_unseen)
    result = ev.retrieval_map(
        params.generator, dataset.unseen_semantics, dataset.unseen_test_features,
        dataset.unseen_test_labels, unseen_ids,
        fractions=tuple(args.fractions), n_generate=args.n_generate,
        rng=io.philox(seed, tr.TAG_EVAL), method=args.method)
    _write_csv(ctx.path("retrieval.csv"), ["fraction", "map"],
               sorted(result.items()))
    for frac, value in sorted(result.items()):
        print(f"map@{frac}: {value:.4f}")


# ---------------------------------------------------------------------------
# argument parsing


def _add_common_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key by dotted path (repeatable)")
    p.add_argument("--steps", type=int, help="override n_steps")
    p.add_argument("--seed", type=int, help="override the seed")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--policy", help="hallucination policy preset name")
    p.add_argument("--lambda", type=float, dest="lam",
                   help="override the creativity weight")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="genzsl",
        description="Generative zero-shot learning toolkit (synthesis, training, "
                    "evaluation, sweeps, ablations, retrieval)")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic benchmark dataset")
    p.add_argument("--out", help="output directory (becomes the dataset directory)")
    p.add_argument("--k-seen", type=int, default=8, dest="k_seen")
    p.add_argument("--k-unseen", type=int, default=4, dest="k_unseen")
    p.add_argument("--visual-dim", type=int, default=32, dest="visual_dim")
    p.add_argument("--semantic-dim", type=int, default=16, dest="semantic_dim")
    p.add_argument("--samples-per-class", type=int, default=200, dest="samples_per_class")
    p.add_argument("--cluster-spread", type=float, default=0.15, dest="cluster_spread")
    p.add_argument("--semantic-noise", type=float, default=0.0, dest="semantic_noise")
    p.add_argument("--split", choices=("easy", "hard"), default="easy")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    _add_common_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-generate", type=int, default=60, dest="n_generate")
    p.add_argument("--metric", choices=("euclidean", "cosine"), default="euclidean")
    p.add_argument("--method", choices=("precision", "average_precision"),
                   default="precision")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="cross-validate the creativity weight")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    _add_common_train_flags(p)
    p.add_argument("--lambda-grid", type=float, nargs="+", dest="lambda_grid")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="run a named ablation suite")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    _add_common_train_flags(p)
    p.add_argument("--suite", required=True,
                   choices=sorted(tr.ABLATION_SUITES))
    p.add_argument("--seeds", type=int, nargs="+")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("retrieve", help="zero-shot retrieval scores")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--fractions", type=float, nargs="+", default=[0.25, 0.5, 1.0])
    p.add_argument("--n-generate", type=int, default=60, dest="n_generate")
    p.add_argument("--method", choices=("precision", "average_precision"),
                   default="precision")
    p.set_defaults(func=cmd_retrieve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    ctx = RunContext(args, args.command)
    try:
        args.func(args, ctx)
    except ValidationError as exc:
        ctx.write_manifest("failed", f"validation error: {exc}")
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except NumericOverflowError as exc:
        ctx.write_manifest("failed", f"numeric failure: {exc}")
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (DataFormatError, OSError) as exc:
        ctx.write_manifest("failed", f"io error: {exc}")
        print(f"io error: {exc}", file=sys.stderr)
        return 4
    ctx.write_manifest("ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
