"""Command-line entry point: synth, train, predict, eval, ablate, modalities, report."""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Tuple

from .config import RunConfig, default_log_level
from .data import SynthConfig, generate_synthetic
from .metrics import evaluate_dataset, join_reports, write_report
from .pipeline import ablate, compare_modalities, predict, train
from .provenance import describe_code

LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
DEFAULT_LOG_FILE = "logs/swnet.log"

logger = logging.getLogger("swnet")


def setup_logging(log_file_path: str, log_level: str) -> logging.Logger:
    """
    Configure the package logger with a file handler and a stderr handler.

    Args:
        log_file_path: Path to the log file; its directory is created
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)

    Returns:
        Configured "swnet" logger
    """
    log_dir = Path(log_file_path).parent
    log_dir.mkdir(parents=True, exist_ok=True)

    level_map = {
        "DEBUG": logging.DEBUG,
        "INFO": logging.INFO,
        "WARNING": logging.WARNING,
        "ERROR": logging.ERROR,
        "CRITICAL": logging.CRITICAL,
    }
    numeric_level = level_map.get(log_level.upper(), logging.INFO)

    package_logger = logging.getLogger("swnet")
    package_logger.setLevel(numeric_level)

    # Remove any existing handlers to avoid duplicates
    for handler in package_logger.handlers[:]:
        package_logger.removeHandler(handler)
        handler.close()

    formatter = logging.Formatter(
        "%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s"
    )
    file_handler = logging.FileHandler(log_file_path, encoding="utf-8")
    stream_handler = logging.StreamHandler(sys.stderr)
    for handler in (file_handler, stream_handler):
        handler.setLevel(numeric_level)
        handler.setFormatter(formatter)
        package_logger.addHandler(handler)

    return package_logger


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="RunConfig JSON file")
    parser.add_argument("--seed", type=int, help="Random seed")
    parser.add_argument(
        "--data", type=Path, help="Dataset root with rgb/, nir/ and mask/"
    )
    parser.add_argument("--out", type=Path, help="Output directory of the run")
    parser.add_argument(
        "--ablation",
        choices=["full", "edge_only", "cbam_only"],
        help="Enhancement modules to keep",
    )
    parser.add_argument("--epochs", type=int, help="Number of training epochs")
    parser.add_argument(
        "--size", type=int, help="Input side in pixels (multiple of 32)"
    )
    parser.add_argument("--batch", type=int, help="Batch size")


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """Config file (or defaults) with the flags the user passed applied on top."""
    cfg = RunConfig.from_json(args.config) if args.config else RunConfig()
    if args.data is not None:
        cfg = cfg.model_copy(update={"synth": None})
    return cfg.with_overrides(
        seed=args.seed,
        data_root=args.data,
        out_dir=args.out,
        ablation=args.ablation,
        epochs=args.epochs,
        input_side=args.size,
        batch_size=args.batch,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swnet",
        description="Bimodal RGB+NIR camouflaged object segmentation",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Logging Options:
  --log-file PATH       Path to log file (default: logs/swnet.log)
  --log-level LEVEL     DEBUG, INFO, WARNING, ERROR, CRITICAL (default: $SWNET_LOG_LEVEL or INFO)

Environment:
  SWNET_DETERMINISTIC=1 single-worker, deterministic-kernel training

Examples:
  %(prog)s synth --out data/synth --n-samples 200 --seed 7
  %(prog)s train --config swnet_config_example.json --out runs/desk
  %(prog)s predict --checkpoint runs/desk/checkpoints/last.pt --input data/synth --out preds
  %(prog)s eval --pred preds --gt data/synth/mask --out reports/desk
  %(prog)s ablate --config swnet_config_example.json --out runs/ablation
  %(prog)s report runs/a/eval/report.json runs/b/eval/report.json
        """,
    )
    parser.add_argument(
        "--log-file",
        default=DEFAULT_LOG_FILE,
        help=f"Path to log file (default: {DEFAULT_LOG_FILE})",
    )
    parser.add_argument(
        "--log-level",
        default=default_log_level(),
        choices=LOG_LEVELS,
        help="Logging level (default: INFO)",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser(
        "synth", help="Generate a synthetic spectral-camouflage dataset"
    )
    synth.add_argument(
        "--config", type=Path, help="RunConfig JSON whose synth block is used"
    )
    synth.add_argument("--out", type=Path, required=True, help="Dataset root to write")
    synth.add_argument("--n-samples", type=int, help="Number of samples")
    synth.add_argument("--seed", type=int, help="Generator seed")
    synth.add_argument("--size", type=int, help="Square side in pixels (≥ 64)")

    train_cmd = commands.add_parser("train", help="Train a model")
    _add_run_options(train_cmd)
    train_cmd.add_argument("--resume", type=Path, help="Checkpoint to resume from")

    predict_cmd = commands.add_parser("predict", help="Export final probability maps")
    predict_cmd.add_argument("--checkpoint", type=Path, required=True)
    predict_cmd.add_argument(
        "--input", type=Path, required=True, help="Directory with rgb/ and nir/"
    )
    predict_cmd.add_argument(
        "--out", type=Path, required=True, help="Directory for PNG maps"
    )
    predict_cmd.add_argument(
        "--config", type=Path, help="Build the model from this config instead"
    )
    predict_cmd.add_argument(
        "--no-overlay", action="store_true", help="Skip error overlays"
    )

    eval_cmd = commands.add_parser("eval", help="Score predictions against masks")
    eval_cmd.add_argument(
        "--pred", type=Path, required=True, help="Directory of prediction PNGs"
    )
    eval_cmd.add_argument(
        "--config", type=Path, help="RunConfig JSON supplying --gt and --out defaults"
    )
    eval_cmd.add_argument(
        "--gt", type=Path, help="Directory of mask PNGs (default: <data_root>/mask)"
    )
    eval_cmd.add_argument(
        "--out", type=Path, help="Directory for the report (default: <out_dir>/eval)"
    )
    eval_cmd.add_argument("--label", default="SWNet", help="Row label in the report")
    eval_cmd.add_argument(
        "--workers", type=int, default=1, help="Parallel evaluation threads"
    )

    ablate_cmd = commands.add_parser(
        "ablate", help="only Edge / only CBAM / Edge + CBAM runs"
    )
    _add_run_options(ablate_cmd)

    modalities_cmd = commands.add_parser("modalities", help="Vis / NIR / Vis+NIR runs")
    _add_run_options(modalities_cmd)

    report_cmd = commands.add_parser(
        "report", help="Join report.json files into one table"
    )
    report_cmd.add_argument("reports", type=Path, nargs="+", help="report.json files")
    report_cmd.add_argument(
        "--config", type=Path, help="RunConfig JSON supplying the --out default"
    )
    report_cmd.add_argument(
        "--out",
        type=Path,
        help="Write the Markdown table here (default: <out_dir>/report.md)",
    )
    report_cmd.add_argument(
        "--first-column", default="Run", help="Header of the label column"
    )

    return parser


def _eval_paths(args: argparse.Namespace) -> Tuple[Path, Path]:
    """Ground-truth and report directories from flags, falling back to --config."""
    cfg = RunConfig.from_json(args.config) if args.config else None
    gt_dir = args.gt
    if gt_dir is None and cfg is not None and cfg.data_root is not None:
        gt_dir = Path(cfg.data_root) / "mask"
    out_dir = args.out
    if out_dir is None and cfg is not None:
        out_dir = Path(cfg.out_dir) / "eval"
    if gt_dir is None:
        raise ValueError("eval needs --gt or a --config with data_root")
    if out_dir is None:
        raise ValueError("eval needs --out or a --config")
    return gt_dir, out_dir


def run_command(args: argparse.Namespace) -> None:
    if args.command == "synth":
        base = RunConfig.from_json(args.config).synth if args.config else None
        values = (base or SynthConfig()).model_dump()
        overrides = {"n_samples": args.n_samples, "seed": args.seed, "size": args.size}
        values.update({k: v for k, v in overrides.items() if v is not None})
        synth_cfg = SynthConfig.model_validate(values)
        manifest = generate_synthetic(synth_cfg, args.out)
        print(manifest.root)

    elif args.command == "train":
        result = train(load_run_config(args), resume=args.resume)
        print(result.checkpoint)

    elif args.command == "predict":
        cfg = RunConfig.from_json(args.config) if args.config else None
        result = predict(
            args.checkpoint, args.input, args.out, cfg=cfg, overlays=not args.no_overlay
        )
        print(args.out)
        logger.info(f"{len(result.overlays)} overlays written")

    elif args.command == "eval":
        gt_dir, out_dir = _eval_paths(args)
        evaluation = evaluate_dataset(args.pred, gt_dir, workers=args.workers)
        paths = write_report(
            evaluation, out_dir, args.label, extra={"provenance": describe_code()}
        )
        print(paths["json"])

    elif args.command == "ablate":
        cfg = load_run_config(args)
        ablate(cfg)
        print(Path(cfg.out_dir) / "ablation.md")

    elif args.command == "modalities":
        cfg = load_run_config(args)
        compare_modalities(cfg)
        print(Path(cfg.out_dir) / "modalities.md")

    elif args.command == "report":
        table = join_reports(args.reports, args.first_column)
        out = args.out
        if out is None and args.config:
            out = Path(RunConfig.from_json(args.config).out_dir) / "report.md"
        if out:
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(table, encoding="utf-8")
        print(table, end="")


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    setup_logging(args.log_file, args.log_level)
    logger.info(f"swnet {args.command}")
    logger.debug(f"Log file: {args.log_file}, log level: {args.log_level}")

    try:
        run_command(args)
    except Exception as e:
        logger.debug("Command failed", exc_info=True)
        logger.error(f"{type(e).__name__}: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
