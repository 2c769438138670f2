"""Command-line entry point: ``biden <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from ..data import DataError, dump_jsonl, load_jsonl, synth_gen
from .ablate import VARIANTS, run_ablation
from .checkpoint import CheckpointError
from .config import Config, ConfigError
from .export import export_attention
from .gradcheck import gradcheck_all
from .train import TrainingError, evaluate, train

ABLATION_TRAIN, ABLATION_DEV = 5000, 1000


def _config(args) -> Config:
    cfg = Config.load(args.config) if getattr(args, "config", None) else Config()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        overrides["out_dir"] = args.out
    for name in ("train", "dev"):
        if getattr(args, name, None) is not None:
            overrides[f"{name}_path"] = getattr(args, name)
    if getattr(args, "task", None) is not None:
        overrides["task"] = args.task
    cfg = cfg.with_overrides(**overrides)
    return cfg


def _emit(obj, as_json: bool, text: str) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True) if as_json else text)


def cmd_synth(args) -> int:
    samples = synth_gen(args.task, args.size, args.seed)
    dump_jsonl(samples, args.out or sys.stdout)
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    result = train(cfg)
    summary = {"best_epoch": result.best_epoch, "best_metric": result.best_metric,
               "checkpoint": result.checkpoint_path, "steps": result.steps,
               "history": result.history, "config_hash": cfg.hash(), "seed": cfg.seed}
    text = "\n".join(f"epoch {h['epoch']}: loss {h['loss']:.4f} dev {h.get('dev')}"
                     for h in result.history)
    text += f"\nbest epoch {result.best_epoch}, checkpoint {result.checkpoint_path}"
    _emit(summary, args.json, text)
    return 0


def cmd_eval(args) -> int:
    report = evaluate(args.checkpoint, args.data, args.task)
    text = "  ".join(f"{k} {v:.4f}" for k, v in report.metrics.items()) + f"  (n={report.count})"
    _emit(report.to_dict(), args.json, text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    return 0


def cmd_gradcheck(args) -> int:
    reports = gradcheck_all(args.seed or 0)
    text = "\n".join(f"{r.task}: max relative error {r.max_rel_error:.3e} "
                     f"({'ok' if r.passed else 'FAIL'})" for r in reports)
    _emit([r.to_dict() for r in reports], args.json, text)
    return 0 if all(r.passed for r in reports) else 1


def cmd_export(args) -> int:
    samples = load_jsonl(args.data)
    if not 0 <= args.index < len(samples):
        raise DataError(f"sample index {args.index} out of range for {len(samples)} samples")
    export_attention(args.checkpoint, samples[args.index], args.out, args.context)
    print(f"wrote {args.out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    if cfg.train_path:
        tr = load_jsonl(cfg.train_path)
        dev = load_jsonl(cfg.dev_path) if cfg.dev_path else None
        if dev is None:
            raise ConfigError("ablate needs a dev set when train_path is given")
    else:
        tr = synth_gen(cfg.task, args.train_size, cfg.seed + 1000)
        dev = synth_gen(cfg.task, args.dev_size, cfg.seed + 2000)
    result = run_ablation(cfg, tr, dev, args.seeds, args.variants)
    _emit(result.to_dict(), args.json, result.table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="biden", description="Train and analyse decoupled dialogue encoders.")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    s = sub.add_parser("synth", help="write a synthetic JSONL corpus")
    s.add_argument("--task", required=True, choices=["a", "b", "c"])
    s.add_argument("--size", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="output path (stdout if omitted)")
    s.set_defaults(func=cmd_synth)

    def common(sp, data=True):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--task")
        if data:
            sp.add_argument("--train", help="training JSONL")
            sp.add_argument("--dev", help="validation JSONL")
        sp.add_argument("--json", action="store_true", help="machine-readable output")

    t = sub.add_parser("train", help="train a model")
    common(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--task")
    e.add_argument("--out", help="also write the metrics JSON here")
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of all task pipelines")
    g.add_argument("--seed", type=int)
    g.add_argument("--json", action="store_true")
    g.set_defaults(func=cmd_gradcheck)

    x = sub.add_parser("export-attn", help="dump channel attention and gates for one sample")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--data", required=True)
    x.add_argument("--index", type=int, default=0)
    x.add_argument("--context", type=int, help="candidate context (default: gold)")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export)

    a = sub.add_parser("ablate", help="run the ablation grid and print a comparison table")
    common(a)
    a.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    a.add_argument("--variants", nargs="+", choices=list(VARIANTS))
    a.add_argument("--train-size", type=int, default=ABLATION_TRAIN)
    a.add_argument("--dev-size", type=int, default=ABLATION_DEV)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataError, CheckpointError, TrainingError, OSError, ValueError) as exc:
        print(f"biden {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
