"""Command-line entry point: ``fairexpr {synth,train,eval,report,compare}``.

Exit codes: 0 success, 2 usage or configuration problem, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config
from .errors import FairExprError, NoSupportError, NumericError, UndefinedFairnessError, ValidationError
from .fairness import build_report
from .ingest import group_by_split, load_manifest, write_manifest
from .models import build_bundle, load_checkpoint
from .reporting import ComparisonMatrix, RunSummary, fingerprint, write_report
from .schema import split_deterministic
from .synth import audit_markdown, audit_rows, bias_audit, generate
from .trainer import evaluate, read_predictions, train, write_predictions

log = logging.getLogger("fairexpr")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
PREDICTIONS = "predictions.csv"
BEST_CHECKPOINT = Path("checkpoints") / "best.json"


class UsageError(FairExprError):
    pass


def _config(args) -> ExperimentConfig:
    if not args.config:
        raise UsageError("--config is required for this command")
    return load_config(args.config, seed=args.seed, output_dir=args.out)


# --- data --------------------------------------------------------------------

def synthesize(cfg: ExperimentConfig) -> Path:
    """Write the configured synthetic dataset, split tags and bias audit."""
    scfg = cfg.synth_config()
    samples, _ = generate(scfg)
    parts = split_deterministic(samples, cfg.dataset.splits, cfg.seed)
    tag_of = {s.id: tag for tag, part in zip(("train", "val", "test"), parts) for s in part}
    tags = [tag_of[s.id] for s in samples]
    manifest = write_manifest(cfg.manifest_path, samples, cfg.schema, scfg.expressions, splits=tags)
    tables = bias_audit(samples, cfg.schema, scfg.n_classes)
    data_dir = manifest.parent
    (data_dir / "audit.md").write_text(audit_markdown(tables, scfg.expressions), encoding="utf-8")
    with (data_dir / "audit.csv").open("w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(audit_rows(tables, scfg.expressions))
    return manifest


def load_splits(cfg: ExperimentConfig) -> dict:
    """``{"train", "val", "test"} -> samples``, synthesising data on first use."""
    path = cfg.manifest_path
    if cfg.dataset.synth is not None and not path.is_file():
        log.info("no synthetic manifest at %s; generating it", path)
        synthesize(cfg)
    samples, tags = load_manifest(path, cfg.schema, cfg.expressions, size=cfg.dataset.image_size,
                                  exclude=cfg.dataset.exclude, return_splits=True)
    if all(t is None for t in tags):
        return dict(zip(("train", "val", "test"), split_deterministic(samples, cfg.dataset.splits, cfg.seed)))
    return group_by_split(samples, tags)


# --- commands ----------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = _config(args)
    manifest = synthesize(cfg)
    cfg.write_resolved()
    print(manifest)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    cfg.write_resolved()
    splits = load_splits(cfg)
    bundle = build_bundle(cfg.approach, len(cfg.expressions), cfg.schema, variant=cfg.variant,
                          feature_dim=cfg.feature_dim, alpha=cfg.alpha, policy=cfg.gradient_policy,
                          input_side=cfg.augment.crop_size, seed=cfg.seed)
    try:
        result = train(bundle, splits["train"], splits["val"], cfg.train, out_dir=cfg.output_dir)
    except NumericError as exc:
        ck = getattr(exc, "checkpoint", None)
        print(f"error: training diverged: {exc}; last good checkpoint: {ck or 'none'}; "
              f"step log: {cfg.output_dir / 'train_log.csv'}", file=sys.stderr)
        return EXIT_RUNTIME
    print(result.best_checkpoint or cfg.output_dir)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    ck = cfg.output_dir / BEST_CHECKPOINT
    if not ck.is_file():
        raise UsageError(f"no checkpoint at {ck}; run 'train' first")
    bundle, _ = load_checkpoint(ck)
    samples = load_splits(cfg)[args.split]
    if not samples:
        raise UsageError(f"split {args.split!r} is empty")
    records = evaluate(bundle, samples, crop_size=cfg.augment.crop_size)
    print(write_predictions(cfg.output_dir / PREDICTIONS, records, cfg.schema, len(cfg.expressions)))
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _config(args)
    target = Path(args.predictions) if args.predictions else cfg.output_dir
    path = target / PREDICTIONS if target.is_dir() else target
    if not path.is_file():
        raise UsageError(f"no predictions at {path}; run 'eval' first")
    records = read_predictions(path, cfg.schema)
    report = build_report(records, cfg.schema, cfg.joint_groupings, cfg.expressions)
    meta = {
        "approach": cfg.approach,
        "alpha": cfg.alpha,
        "augmentation": cfg.augment.enabled,
        "seed": cfg.seed,
        "n_records": len(records),
        "eval_fingerprint": fingerprint(records),
    }
    js, md = write_report(report, path.parent, meta)
    print(js)
    print(md)
    return EXIT_OK


def cmd_compare(args) -> int:
    runs = [RunSummary.load(d) for d in args.runs]
    matrix = ComparisonMatrix.from_runs(runs)
    js, md = matrix.write(args.out or "comparison")
    print(js)
    print(md)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment YAML file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fairexpr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic dataset").set_defaults(fn=cmd_synth)
    sub.add_parser("train", parents=[common], help="train one approach").set_defaults(fn=cmd_train)
    p = sub.add_parser("eval", parents=[common], help="write predictions for a split")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.set_defaults(fn=cmd_eval)
    p = sub.add_parser("report", parents=[common], help="accuracy and fairness report")
    p.add_argument("predictions", nargs="?", help="predictions CSV or run directory")
    p.set_defaults(fn=cmd_report)
    p = sub.add_parser("compare", parents=[common], help="tabulate several reported runs")
    p.add_argument("runs", nargs="+", help="run directories")
    p.set_defaults(fn=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ValidationError, UsageError, NoSupportError, UndefinedFairnessError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:  # ConfigError and friends
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FairExprError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
