"""Command-line entry points.

Commands: ``generate``, ``train``, ``selflearn``, ``evaluate``, ``visualize``.
All commands share ``--config PATH``, ``--seed N``, ``--out DIR`` and repeated
``--set section.key=value`` overrides (flags win over the file). The default
output directory comes from the ``IDLINK_OUT`` environment variable.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import corpus
from .config import (
    ConfigError,
    DEFAULT_OUTPUT_DIR,
    OUTPUT_DIR_ENV,
    RunConfig,
    load_config,
)
from .corpus.types import DataError
from .evaluation import (
    EvalConfig,
    PhaseTimer,
    confident_pair_accuracy,
    evaluate_model,
    export_attention,
    held_out_pairs,
    sparsity_sweep,
    sweep_to_csv,
    sweep_to_plot_json,
)
from .linkage import load_checkpoint, save_checkpoint, train_supervised
from .selflearn import select_confident_pairs, self_learning_loop

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _out_dir(cfg: RunConfig) -> Path:
    out = cfg.out_dir or os.environ.get(OUTPUT_DIR_ENV) or DEFAULT_OUTPUT_DIR
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _dataset_paths(cfg: RunConfig, out: Path) -> tuple[Path, Path, Path]:
    source = Path(cfg.paths.source_dir) if cfg.paths.source_dir else out / "source"
    target = Path(cfg.paths.target_dir) if cfg.paths.target_dir else out / "target"
    annotations = Path(cfg.paths.annotations) if cfg.paths.annotations else out / "annotations.jsonl"
    return source, target, annotations


def _load_pair(cfg: RunConfig, out: Path) -> corpus.NetworkPair:
    source, target, annotations = _dataset_paths(cfg, out)
    for path in (source, target, annotations):
        if not path.exists():
            raise DataError(f"dataset path not found: {path}")
    return corpus.load_network_pair(source, target, annotations, caps=cfg.model.caps)


def _load_ground_truth(cfg: RunConfig, out: Path, required: bool):
    path = Path(cfg.paths.ground_truth) if cfg.paths.ground_truth else out / "ground_truth.jsonl"
    if not path.exists():
        if required:
            raise DataError(f"ground truth file not found: {path}")
        return None
    return corpus.load_annotation_pairs(path)


def _checkpoint_path(cfg: RunConfig, out: Path) -> Path:
    return Path(cfg.paths.checkpoint) if cfg.paths.checkpoint else out / "checkpoint.npz"


def _load_embeddings_if_any(cfg: RunConfig, pair: corpus.NetworkPair):
    tables = []
    for path, vocab in (
        (cfg.paths.source_embeddings, pair.source.vocab),
        (cfg.paths.target_embeddings, pair.target.vocab),
    ):
        tables.append(corpus.load_embeddings(path, vocab, seed=cfg.seed) if path else None)
    return (tables[0], tables[1]) if any(t is not None for t in tables) else None


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def cmd_generate(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    pair, ground_truth = corpus.generate_synthetic_pair(cfg.synth)
    annotations, _ = corpus.sample_annotations(ground_truth, cfg.eval.train_ratio, seed=cfg.synth.seed)
    written = corpus.save_network_pair(
        pair.with_annotations(annotations), out, ground_truth=ground_truth
    )
    _emit(
        {
            "command": "generate",
            "out_dir": str(out),
            "files": [str(p) for p in written],
            "users_per_side": cfg.synth.users_per_side,
            "ground_truth_pairs": len(ground_truth),
            "annotations": len(annotations),
        }
    )
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    pair = _load_pair(cfg, out)
    embeddings = _load_embeddings_if_any(cfg, pair)
    result = train_supervised(pair, cfg.train, model_cfg=cfg.model, embeddings=embeddings)
    ckpt = _checkpoint_path(cfg, out)
    save_checkpoint(result.model, ckpt)

    curve = out / "training_curve.csv"
    with curve.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        keys = list(result.history[0].keys())
        writer.writerow(keys)
        for record in result.history:
            writer.writerow([record[k] if k == "epoch" else repr(record[k]) for k in keys])
    _emit(
        {
            "command": "train",
            "checkpoint": str(ckpt),
            "training_curve": str(curve),
            "epochs": len(result.history),
            "converged": result.converged,
            "final_loss": result.history[-1]["loss"],
        }
    )
    return EXIT_OK


def _checkpoint_evaluator(pair, ground_truth, annotations_initial, eval_cfg: EvalConfig):
    """Fixed held-out test sample, reused for every self-learning checkpoint."""
    held = held_out_pairs(ground_truth, annotations_initial)
    if not held:
        return None
    n_test = min(len(held), eval_cfg.test_pairs or len(held))
    rng = np.random.default_rng(eval_cfg.seed)
    chosen = sorted(rng.choice(len(held), size=n_test, replace=False).tolist())
    sample = [held[i] for i in chosen]
    sample_cfg = EvalConfig(
        k=eval_cfg.k, test_pairs=None, train_ratio=eval_cfg.train_ratio,
        repetitions=1, seed=eval_cfg.seed,
    )

    def evaluate(model, _annotations):
        report = evaluate_model(
            model, pair, sample, sample_cfg, annotations=corpus.AnnotationSet.empty()
        )
        return report.mean_hit_precision

    return evaluate


def cmd_selflearn(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    pair = _load_pair(cfg, out)
    model = load_checkpoint(_checkpoint_path(cfg, out))
    ground_truth = _load_ground_truth(cfg, out, required=False)

    timer = PhaseTimer()
    evaluator = (
        _checkpoint_evaluator(pair, ground_truth, pair.annotations, cfg.eval)
        if ground_truth
        else None
    )
    with timer.phase("self_learn"):
        result = self_learning_loop(
            pair,
            cfg.selflearn,
            train_cfg=cfg.train,
            model=model,
            ground_truth=ground_truth,
            evaluate_checkpoint=evaluator,
        )

    ckpt = out / "checkpoint_selflearn.npz"
    save_checkpoint(result.model, ckpt)
    audit_path = out / "selflearn_audit.jsonl"
    with audit_path.open("w", encoding="utf-8") as fh:
        for record in result.audit:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    metrics_path = out / "selflearn_metrics.json"
    _write_json(metrics_path, result.metrics)
    _write_json(out / "selflearn_timings.json", timer.summary())
    _emit(
        {
            "command": "selflearn",
            "checkpoint": str(ckpt),
            "audit": str(audit_path),
            "metrics": str(metrics_path),
            "mode": "vanilla" if cfg.selflearn.vanilla else "noise_aware",
            "iterations": cfg.selflearn.outer_iterations,
            "final_annotations": len(result.annotations),
        }
    )
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, sweep_axis: str | None, audit_confident: bool) -> int:
    out = _out_dir(cfg)
    pair = _load_pair(cfg, out)
    model = load_checkpoint(_checkpoint_path(cfg, out))
    ground_truth = _load_ground_truth(cfg, out, required=True)

    timer = PhaseTimer()
    reports = {}
    with timer.phase("evaluate"):
        for k in cfg.eval.report_ks:
            eval_cfg = EvalConfig(
                k=k,
                test_pairs=cfg.eval.test_pairs,
                train_ratio=cfg.eval.train_ratio,
                repetitions=cfg.eval.repetitions,
                seed=cfg.eval.seed,
            )
            reports[k] = evaluate_model(model, pair, ground_truth, eval_cfg)

    report_json = {
        "hit_precision": {str(k): r.to_json_dict() for k, r in reports.items()},
        "test_pairs": cfg.eval.test_pairs,
        "repetitions": cfg.eval.repetitions,
    }
    csv_path = out / "eval_report.csv"
    with csv_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        ks = sorted(reports)
        writer.writerow(["repetition", *[f"k={k}" for k in ks]])
        for rep in range(cfg.eval.repetitions):
            writer.writerow([rep, *[repr(reports[k].per_repetition[rep]) for k in ks]])
        writer.writerow(["mean", *[repr(reports[k].mean_hit_precision) for k in ks]])

    if audit_confident:
        with timer.phase("confident_audit"):
            candidates = select_confident_pairs(
                model, pair, pair.annotations, cfg.selflearn.n_confident
            )
            report_json["confident_pair_accuracy"] = confident_pair_accuracy(
                candidates, dict(ground_truth)
            )
    if sweep_axis:
        with timer.phase("sparsity_sweep"):
            rows = sparsity_sweep(
                pair,
                ground_truth,
                cfg.eval.sparsity_fractions,
                sweep_axis,
                cfg.train,
                EvalConfig(
                    k=cfg.eval.k,
                    test_pairs=cfg.eval.test_pairs,
                    train_ratio=cfg.eval.train_ratio,
                    repetitions=cfg.eval.repetitions,
                    seed=cfg.eval.seed,
                ),
                model_cfg=cfg.model,
                sparsity_seed=cfg.seed,
            )
        (out / f"sparsity_{sweep_axis}.csv").write_text(sweep_to_csv(rows), encoding="utf-8")
        _write_json(out / f"sparsity_{sweep_axis}.json", sweep_to_plot_json(rows))

    _write_json(out / "eval_report.json", report_json)
    _write_json(out / "eval_timings.json", timer.summary())
    _emit(
        {
            "command": "evaluate",
            "report": str(out / "eval_report.json"),
            "csv": str(csv_path),
            "mean_hit_precision": {str(k): reports[k].mean_hit_precision for k in reports},
        }
    )
    return EXIT_OK


def cmd_visualize(cfg: RunConfig, network: str, user_id: str, heatmap_out: str | None) -> int:
    out = _out_dir(cfg)
    pair = _load_pair(cfg, out)
    model = load_checkpoint(_checkpoint_path(cfg, out))
    trace = export_attention(model, pair, network, user_id)
    print(json.dumps(trace, sort_keys=True, indent=2))
    if heatmap_out:
        rows = [
            {
                "microblog": blog["index"],
                "sentence": sent["index"],
                "tokens": [w["token"] for w in sent["words"]],
                "weights": [w["weight"] for w in sent["words"]],
                "row_weight": blog["weight"] * sent["weight"],
            }
            for blog in trace["microblogs"]
            for sent in blog["sentences"]
        ]
        _write_json(Path(heatmap_out), {"user_id": user_id, "network": network, "rows": rows})
    return EXIT_OK


def build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file")
    common.add_argument("--seed", type=int, help="global seed (fills unset section seeds)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config value, e.g. --set train.max_epochs=50",
    )

    parser = _Parser(prog="idlink", description="Variational user identity linkage")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    sub.add_parser("train", parents=[common], help="train the supervised linkage model")
    sub.add_parser("selflearn", parents=[common], help="noise-aware self-learning from a checkpoint")
    evaluate = sub.add_parser("evaluate", parents=[common], help="hit-precision evaluation")
    evaluate.add_argument("--sweep", choices=("relations", "microblogs"), help="run a sparsity sweep")
    evaluate.add_argument(
        "--audit-confident", action="store_true", help="report confident-pair accuracy"
    )
    visualize = sub.add_parser("visualize", parents=[common], help="export attention weights")
    visualize.add_argument("--network", choices=("source", "target"), default="source")
    visualize.add_argument("--user", required=True, help="user id to visualize")
    visualize.add_argument("--heatmap-out", help="also write plot-ready heatmap data to this file")
    return parser


def main(argv=None) -> int:
    torch.set_num_threads(1)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides, seed=args.seed, out_dir=args.out)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "selflearn":
            return cmd_selflearn(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.sweep, args.audit_confident)
        if args.command == "visualize":
            return cmd_visualize(cfg, args.network, args.user, args.heatmap_out)
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"idlink: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"idlink: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"idlink: error: {exc!r}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
