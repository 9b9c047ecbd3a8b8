"""Command-line interface.

Subcommands: gen-data, train, eval, verify, ablate.  Exit codes: 0 success,
1 configuration or input error, 2 verification failure, 3 training abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from mmie.checkpoint import CheckpointError
from mmie.config import RunConfig, load_config
from mmie.data import (CorpusFormatError, CorpusSpec, ConfigError, TASK_NER,
                       TASK_RE, corpus_meta, generate_corpus, write_corpus)
from mmie.train import TrainingError, evaluate_checkpoint, run_training
from mmie.verify import SUITES, run_suite


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; bad usage is a config error here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser) -> None:
    # None means "not given" so config-file values are not clobbered
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mmie",
                     description="Multimodal tagging/relation pipeline on "
                                 "synthetic corpora")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    gen = sub.add_parser("gen-data", help="generate a synthetic corpus")
    gen.add_argument("--task", choices=[TASK_NER, TASK_RE], required=True)
    _add_common(gen)
    gen.add_argument("--train", type=int, default=4000)
    gen.add_argument("--val", type=int, default=1000)
    gen.add_argument("--test", type=int, default=1000)
    gen.add_argument("--visual-dependency", type=float, default=0.5)
    gen.add_argument("--vocab-size", type=int, default=64)
    gen.add_argument("--entity-types", type=int, default=3)
    gen.add_argument("--relation-types", type=int, default=5)
    gen.add_argument("--image-size", type=int, default=16)
    gen.add_argument("--object-size", type=int, default=8)
    gen.set_defaults(func=cmd_gen_data)

    def add_train_flags(p):
        p.add_argument("--task", choices=[TASK_NER, TASK_RE], default=None)
        p.add_argument("--config", default=None, help="key=value config file")
        _add_common(p)
        p.add_argument("--no-semantic-loss", action="store_true", default=None)
        p.add_argument("--no-attnmixup", action="store_true", default=None)
        p.add_argument("--train-path", default=None)
        p.add_argument("--val-path", default=None)
        p.add_argument("--test-path", default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--batch-size", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)

    tr = sub.add_parser("train", help="train a model")
    add_train_flags(tr)
    tr.add_argument("--seeds", default=None,
                    help="comma-separated seeds for repeated runs")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--batch-size", type=int, default=64)
    _add_common(ev)
    ev.set_defaults(func=cmd_eval)

    ve = sub.add_parser("verify", help="run property/oracle suites")
    ve.add_argument("--suite", choices=sorted(SUITES) + ["all"], default="all")
    _add_common(ve)
    ve.set_defaults(func=cmd_verify)

    ab = sub.add_parser("ablate",
                        help="train full model and both single-component "
                             "ablations")
    add_train_flags(ab)
    ab.set_defaults(func=cmd_ablate)
    return parser


def _resolve_run_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = load_config(args.config, base=cfg)
    overrides = {
        "task": args.task,
        "seed": args.seed,
        "out_dir": args.out,
        "no_semantic_loss": args.no_semantic_loss,
        "no_attnmixup": args.no_attnmixup,
        "train_path": args.train_path,
        "val_path": args.val_path,
        "test_path": args.test_path,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "lr": args.lr,
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    cfg.validate()
    return cfg


def cmd_gen_data(args) -> int:
    out_dir = args.out or "."
    seed = 0 if args.seed is None else args.seed
    spec = CorpusSpec(task=args.task, vocab_size=args.vocab_size,
                      num_entity_types=args.entity_types,
                      num_relation_types=args.relation_types,
                      num_train=args.train, num_val=args.val,
                      num_test=args.test, seed=seed,
                      visual_dependency=args.visual_dependency,
                      image_size=args.image_size, object_size=args.object_size)
    splits = generate_corpus(spec)
    os.makedirs(out_dir, exist_ok=True)
    meta = corpus_meta(spec)
    for name, samples in zip(("train", "val", "test"), splits):
        path = os.path.join(out_dir, f"{name}.jsonl")
        write_corpus(samples, path, meta=meta)
        print(f"wrote {path} ({len(samples)} samples)")
    return 0


def _train_once(cfg: RunConfig) -> dict:
    summary = run_training(cfg)
    for line in summary["log_lines"]:
        print(line)
    test = summary["test"]
    print(f"best_epoch={summary['best_epoch']}"
          f" test_p={test['precision']:.6f}"
          f" test_r={test['recall']:.6f}"
          f" test_f1={test['f1']:.6f}")
    print(f"checkpoint: {summary['checkpoint_path']}")
    print(f"metrics: {summary['metrics_path']}")
    return summary


def cmd_train(args) -> int:
    cfg = _resolve_run_config(args)
    if args.seeds:
        try:
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"bad --seeds list: {args.seeds!r}") from None
        if not seeds:
            raise ConfigError("--seeds is empty")
        for seed in seeds:
            run_cfg = dataclasses.replace(cfg, seed=seed)
            print(f"=== seed {seed} ===")
            _train_once(run_cfg)
        return 0
    _train_once(cfg)
    return 0


def cmd_eval(args) -> int:
    report = evaluate_checkpoint(args.checkpoint, args.data,
                                 batch_size=args.batch_size)
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "eval-report.json")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(f"report: {path}", file=sys.stderr)
    return 0


def cmd_verify(args) -> int:
    names = sorted(SUITES) if args.suite == "all" else [args.suite]
    seed = 0 if args.seed is None else args.seed
    failed = False
    for name in names:
        result = run_suite(name, seed=seed)
        print(result.summary())
        if not result.passed:
            failed = True
            if result.failure is not None:
                out_dir = args.out or "."
                os.makedirs(out_dir, exist_ok=True)
                path = os.path.join(out_dir, f"verify-{name}-failure.json")
                with open(path, "w", encoding="utf-8") as fh:
                    json.dump(result.failure, fh, indent=2, sort_keys=True)
                    fh.write("\n")
                print(f"failing case written to {path}", file=sys.stderr)
    return 2 if failed else 0


def cmd_ablate(args) -> int:
    base = _resolve_run_config(args)
    variants = [
        ("full", {}),
        ("no_semantic_loss", {"no_semantic_loss": True}),
        ("no_attnmixup", {"no_attnmixup": True}),
    ]
    reports = {}
    for name, flags in variants:
        cfg = dataclasses.replace(base, **flags)
        print(f"=== {name} ===")
        summary = _train_once(cfg)
        reports[name] = summary["test"]
    out_dir = base.out_dir
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"ablation-summary-s{base.seed}.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(reports, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"ablation summary: {path}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CorpusFormatError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
