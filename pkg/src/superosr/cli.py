"""Command-line entry point.

Verbs: ``train`` (run the configured experiment grid and write artifacts plus
reports), ``sweep-openness``, ``report`` (re-emit reports from stored
artifacts), and ``gradcheck``.  Exit codes: 0 success, 1 configuration error,
2 I/O error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import parse_config
from .errors import ConfigError, DataFormatError
from .experiment import run_experiment, sweep_openness
from .gradcheck import TOLERANCE, run_gradcheck
from .report import emit_openness_report, emit_report, load_artifacts, write_artifacts

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_VERIFY = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="superosr", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    train = sub.add_parser("train", help="run the configured experiment grid")
    train.add_argument("--config", required=True, help="experiment config file")
    train.add_argument("--out", help="output directory (overrides output_dir)")
    train.add_argument("--seed", type=int, help="override base_seed")
    train.add_argument("--runs", type=int, help="override runs per (set, method)")

    sweep = sub.add_parser("sweep-openness", help="run at several known-class counts")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--train-counts", required=True, help="comma list, e.g. 8,6,4")
    sweep.add_argument("--out", help="output directory (overrides output_dir)")
    sweep.add_argument("--seed", type=int)
    sweep.add_argument("--runs", type=int)

    report = sub.add_parser("report", help="re-emit reports from stored artifacts")
    report.add_argument("--artifacts", required=True, help="directory holding runs/")
    report.add_argument("--out", help="output directory (defaults to --artifacts)")

    gradcheck = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.add_argument(
        "--corrupt", action="store_true",
        help="negative control: corrupt analytic gradients and expect failure",
    )
    return parser


def _apply_overrides(config, args):
    if getattr(args, "out", None):
        config.output_dir = args.out
    if getattr(args, "seed", None) is not None:
        config.base_seed = args.seed
    if getattr(args, "runs", None) is not None:
        config.runs = args.runs
    return config.validate()


def _cmd_train(args) -> int:
    config = _apply_overrides(parse_config(args.config), args)
    artifacts = run_experiment(config)
    write_artifacts(artifacts, config.output_dir)
    files = emit_report(artifacts, config.output_dir)
    for name, path in sorted(files.items()):
        print(f"{name}: {path}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    config = _apply_overrides(parse_config(args.config), args)
    counts = [int(tok) for tok in args.train_counts.split(",") if tok.strip()]
    if not counts:
        raise ConfigError("--train-counts must list at least one count")
    levels = sweep_openness(config, counts)
    for level in levels:
        sub_dir = f"{config.output_dir}/open_{level.c_train}"
        write_artifacts(level.artifacts, sub_dir)
        emit_report(level.artifacts, sub_dir)
    path = emit_openness_report(levels, config.output_dir)
    print(f"openness: {path}")
    return EXIT_OK


def _cmd_report(args) -> int:
    artifacts = load_artifacts(args.artifacts)
    files = emit_report(artifacts, args.out or args.artifacts)
    for name, path in sorted(files.items()):
        print(f"{name}: {path}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    results = run_gradcheck(base_seed=args.seed, corrupt=args.corrupt)
    failed = False
    for result in results:
        status = "pass" if result.passed else "FAIL"
        print(f"{result.component:<28} worst rel err {result.worst_rel_err:.3e}  {status}")
        failed = failed or not result.passed
    if failed:
        print(f"gradcheck FAILED (tolerance {TOLERANCE:g})")
        return EXIT_VERIFY
    print(f"gradcheck passed (tolerance {TOLERANCE:g})")
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "sweep-openness": _cmd_sweep,
        "report": _cmd_report,
        "gradcheck": _cmd_gradcheck,
    }
    try:
        return handlers[args.verb](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DataFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
