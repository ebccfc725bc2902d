"""``sslcalib`` command-line runner.

Subcommands: generate-data, train, evaluate, score-coreset, report.
Exit codes: 0 ok, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import NoReturn, Optional, Sequence

from . import __version__
from .analysis.metrics import (
    DEFAULT_BINS, PredictionTrace, calibration_summary, reliability_table, write_reliability_csv,
)
from .analysis.report import aggregate_runs, format_table, write_report_csv
from .config import ExperimentConfig, InfuseConfig, config_hash, flatten_config, load_config, resolve_seed, save_config
from .core import seeding
from .data.dataset import Dataset, load_csv_dataset, make_blobs, make_two_moons, read_dataset, split, write_dataset
from .nn.classifier import predict_proba
from .selection.infuse import build_core_set, write_coreset_csv
from .training.trainer import MODEL_FILE, Trainer, load_classifier

logger = logging.getLogger("sslcalib")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
METRICS_SCHEMA_VERSION = 1


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ----------------------------------------------------------------------
# Helpers
# ----------------------------------------------------------------------

def _configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)


def _load_experiment(args: argparse.Namespace) -> ExperimentConfig:
    base = ExperimentConfig.from_preset(args.preset)
    cfg = load_config(args.config, base) if args.config else base
    seed = resolve_seed(args.seed, cfg)
    update = {"seed": seed}
    if args.out:
        update["output_dir"] = args.out
    return cfg.model_copy(update=update)


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    d = cfg.dataset
    if d.kind == "two_moons":
        raw = make_two_moons(d.n_examples, d.noise, cfg.seed)
    elif d.kind == "blobs":
        raw = make_blobs(d.n_examples, d.n_classes, d.spread, cfg.seed)
    else:
        assert d.csv_path is not None
        raw = load_csv_dataset(d.csv_path, cfg.seed)
    return split(raw, d.n_labeled_per_class, d.n_validation, d.n_test, cfg.seed)


def _data_dir(args: argparse.Namespace, cfg: ExperimentConfig) -> Path:
    return Path(args.data) if getattr(args, "data", None) else Path(cfg.dataset.path)


def _checkpoint(args: argparse.Namespace) -> Path:
    if args.checkpoint:
        return Path(args.checkpoint)
    return Path(_load_experiment(args).output_dir) / MODEL_FILE


# ----------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------

def cmd_generate_data(args: argparse.Namespace) -> int:
    cfg = _load_experiment(args)
    target = Path(args.out) if args.out else Path(cfg.dataset.path)
    ds = build_dataset(cfg)
    echo = {k: v for k, v in flatten_config(cfg).items() if k.startswith("dataset.")}
    write_dataset(ds, target, extra={"config": echo})
    print(f"wrote {ds.n_examples} examples to {target} ({ds.counts()})")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_experiment(args)
    dataset = read_dataset(_data_dir(args, cfg))
    out = Path(cfg.output_dir)
    save_config(cfg, out / "config.txt")
    report = Trainer(cfg, dataset, out, progress=args.progress).run(resume_from=args.resume)
    final = report.final
    print(
        f"{out}: {report.iterations} iterations, error {final['error_rate']:.2f}%, "
        f"ece {final['ece']:.4f}, mce {final['mce']:.4f}, ace {final['ace']:.4f}"
    )
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    checkpoint = _checkpoint(args)
    model, ckpt_cfg = load_classifier(checkpoint)
    cfg = _load_experiment(args) if args.config else ckpt_cfg
    dataset = read_dataset(Path(args.data) if args.data else Path(cfg.dataset.path))
    test = dataset.test()
    if len(test) == 0:
        raise ValueError("dataset has an empty test split")
    bins = args.bins or ckpt_cfg.train.calibration_bins
    trace = PredictionTrace.from_probs(predict_proba(model, test.features), test.labels)
    metrics = {
        "schema_version": METRICS_SCHEMA_VERSION,
        "checkpoint": str(checkpoint),
        "config_hash": config_hash(ckpt_cfg),
        "config": flatten_config(ckpt_cfg),
        "n_test": len(test),
        "bins": bins,
        **calibration_summary(trace, bins),
    }
    out = Path(args.out) if args.out else checkpoint.parent
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_reliability_csv(reliability_table(trace, bins), out / "reliability.csv")
    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        from .visualization.reliability import plot_reliability

        plot_reliability(trace, bins, save_path=out / "reliability.png")
    print(json.dumps({k: metrics[k] for k in ("error_rate", "ece", "mce", "ace")}))
    return EXIT_OK


def cmd_score_coreset(args: argparse.Namespace) -> int:
    checkpoint = _checkpoint(args)
    model, ckpt_cfg = load_classifier(checkpoint)
    if args.config:
        cfg = _load_experiment(args)
    else:
        cfg = ckpt_cfg.model_copy(update={"seed": resolve_seed(args.seed, ckpt_cfg)})
    infuse_cfg = cfg.infuse
    if args.keep_ratio is not None:
        infuse_cfg = InfuseConfig.model_validate({**infuse_cfg.model_dump(), "keep_ratio": args.keep_ratio})
    dataset = read_dataset(Path(args.data) if args.data else Path(cfg.dataset.path))
    validation = dataset.validation() if len(dataset.ids_for("validation")) else None
    stream = seeding.CORESET if infuse_cfg.selection == "random" else seeding.MIXUP
    core = build_core_set(
        model, dataset.labeled(), dataset.unlabeled(), validation, infuse_cfg,
        cfg.train.tau, cfg.train.lambda_unlab, seeding.stream_rng(cfg.seed, stream),
    )
    out = Path(args.out) if args.out else checkpoint.parent
    path = write_coreset_csv(core, out / "coreset.csv")
    print(f"kept {core.size} of {len(dataset.unlabeled())} unlabeled examples -> {path}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    groups = aggregate_runs(args.runs)
    table = format_table(groups)
    out = Path(args.out) if args.out else Path(".")
    write_report_csv(groups, out / "report.csv")
    (out / "report.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_OK


# ----------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="key = value config file")
    common.add_argument("--seed", type=int, default=None, help="root seed (beats SSLCALIB_SEED and the config)")
    common.add_argument("--out", type=str, default=None, help="output directory")
    common.add_argument("--preset", choices=["desk", "full"], default="desk", help="defaults before the config file")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    common.add_argument("-q", "--quiet", action="store_true", help="warnings only")

    parser = _Parser(prog="sslcalib", description="Semi-supervised training with calibrated pseudo-labels and core sets.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate-data", parents=[common], help="write features CSV and split manifest")
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", parents=[common], help="train and write checkpoints and report.json")
    p.add_argument("--data", type=str, default=None, help="dataset directory (default: dataset.path)")
    p.add_argument("--resume", type=str, default=None, help="checkpoint to continue from")
    p.add_argument("--progress", action="store_true", help="show a progress bar")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="test-split error and calibration metrics")
    p.add_argument("--checkpoint", type=str, default=None, help="default: <output_dir>/model.sslc")
    p.add_argument("--data", type=str, default=None)
    p.add_argument("--bins", type=int, default=None, help=f"calibration buckets (default {DEFAULT_BINS})")
    p.add_argument("--plot", action="store_true", help="also write reliability.png")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("score-coreset", parents=[common], help="one-shot core-set scoring and selection")
    p.add_argument("--checkpoint", type=str, default=None, help="default: <output_dir>/model.sslc")
    p.add_argument("--data", type=str, default=None)
    p.add_argument("--keep-ratio", type=float, default=None)
    p.set_defaults(func=cmd_score_coreset)

    p = sub.add_parser("report", parents=[common], help="aggregate run directories")
    p.add_argument("runs", nargs="+", help="run directories containing report.json")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(list(argv) if argv is not None else None)
    _configure_logging(args.verbose, args.quiet)
    if getattr(args, "bins", None) is not None and args.bins < 1:
        parser.error("--bins must be at least 1")
    try:
        return int(args.func(args))
    except (ValueError, OSError, RuntimeError) as exc:
        logger.debug("command failed", exc_info=True)
        print(f"sslcalib: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
