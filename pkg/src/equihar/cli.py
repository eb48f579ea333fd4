"""
Command-line entry point.

Exit codes: 0 on success, 1 on usage errors and failures outside the data, 2 on
dataset errors and 3 when a self-test or acceptance check fails.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from collections.abc import Callable, Sequence
from dataclasses import asdict
from pathlib import Path
from typing import NoReturn

import pandas as pd

from equihar.codec import dump_record
from equihar.config import (
    ExperimentConfig,
    build_experiment_config,
    read_config_file,
)
from equihar.dataset import fetch_dataset
from equihar.errors import ConfigError, DataError, EquiharError, StageError
from equihar.features import RepresentationKind, extract_batch, write_features_csv
from equihar.learn import Metrics, TrainedHead, train_head
from equihar.pipeline import (
    evaluate,
    head_name,
    head_store,
    load_splits,
    run_benchmark,
    run_naturality_suite,
)
from equihar.robustness import orbit_displacement

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CHECK_FAILED = 3

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

SPECTRAL_DISPLACEMENT_LIMIT = 1e-9
BASELINE_DISPLACEMENT_FLOOR = 0.1


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _overrides(args: argparse.Namespace) -> dict[str, str]:
    overrides = {
        "data_root": args.data_root,
        "acc_variant": args.acc_variant,
        "output_dir": args.output_dir,
        "kinds": args.kinds,
        "k": None if args.k is None else ",".join(args.k),
        "seeds": args.seeds,
        "ood_seed": args.ood_seed,
        "group_only_reading": args.group_only_reading,
        "amplitude_log": "false" if args.no_amplitude_log else None,
        "rotations_enabled": "false" if args.no_rotations else None,
    }
    return {key: value for key, value in overrides.items() if value is not None}


def _print_table(rows: list[dict[str, object]]) -> None:
    print(pd.DataFrame(rows).to_string(index=False))


def _metrics_row(kind: RepresentationKind, k: int, metrics: Metrics) -> dict[str, object]:
    return {
        "kind": kind.value,
        "k": k,
        "accuracy": round(metrics.accuracy, 4),
        "weighted_f1": round(metrics.weighted_f1, 4),
    }


def _fetch(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    fetch_dataset(cfg.dataset)
    return EXIT_OK


def _extract(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    for har_split in load_splits(cfg):
        for k in cfg.ks:
            for kind in cfg.kinds:
                features = extract_batch(har_split.signals, kind, k, cfg.group_only_reading)
                path = cfg.output_dir / f"features_{har_split.split.value}_{kind.value}_k{k}.csv"
                write_features_csv(
                    path, features, kind, har_split.labels, k, period=cfg.dataset.period
                )
                logger.info("Wrote %s", path)
    return EXIT_OK


def _train(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    train, _ = load_splits(cfg)
    store = head_store(cfg.output_dir)
    for k in cfg.ks:
        for kind in cfg.kinds:
            head = train_head(
                extract_batch(train.signals, kind, k, cfg.group_only_reading),
                train.labels,
                kind,
                k,
                amplitude_log=cfg.amplitude_log,
                spectral_only_view=args.spectral_only,
                group_only_reading=cfg.group_only_reading,
            )
            store.track(head_name(kind, k, args.spectral_only), head, replace=True)
    return EXIT_OK


def _load_heads(cfg: ExperimentConfig, spectral_only: bool) -> list[TrainedHead]:
    store = head_store(cfg.output_dir)
    names = store.get_names(TrainedHead)
    heads = []
    for k in cfg.ks:
        for kind in cfg.kinds:
            name = head_name(kind, k, spectral_only)
            if name not in names:
                raise ConfigError(f"No trained head {name} in {cfg.output_dir}, run train first")
            heads.append(store.get(name, TrainedHead))
    return heads


def _eval(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    heads = _load_heads(cfg, args.spectral_only)
    _, test = load_splits(cfg)
    _print_table([_metrics_row(head.kind, head.k, evaluate(head, test)) for head in heads])
    return EXIT_OK


def _ood_eval(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    heads = _load_heads(cfg, args.spectral_only)
    _, test = load_splits(cfg)
    ood = cfg.ood.time_gain_only() if args.time_gain_only else cfg.ood
    rows = []
    for head in heads:
        for seed in cfg.seeds:
            row = _metrics_row(head.kind, head.k, evaluate(head, test, ood.with_seed(seed)))
            rows.append({**row, "seed": seed})
    _print_table(rows)
    return EXIT_OK


def _ablate(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    report = run_benchmark(cfg)
    print(
        f"acc_variant={cfg.dataset.acc_variant.value} "
        f"amplitude_log={cfg.amplitude_log} "
        f"rotations_enabled={cfg.ood.rotations_enabled} "
        f"group_only_reading={cfg.group_only_reading.value}"
    )
    _print_table(
        [
            {
                "kind": s.kind.value,
                "k": s.k,
                "dim": s.dimension,
                "clean": round(s.clean_accuracy, 4),
                "ood_mean": round(s.ood_accuracy_mean, 4),
                "ood_std": round(s.ood_accuracy_std, 4),
            }
            for s in report.summaries
        ]
    )
    for name, passed in report.acceptance.items():
        logger.info("Check %s: %s", name, "passed" if passed else "FAILED")
    if args.check and not report.accepted:
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _naturality_test(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    report = run_naturality_suite(
        n_samples=args.samples,
        seed=args.seed,
        fault_injection=args.fault_injection,
        n_composites=args.composites,
        k=cfg.k,
        period=cfg.dataset.period,
    )
    if report.checks:
        _print_table(
            [
                {
                    "check": c.name,
                    "squares": c.n_residuals,
                    "max_residual": f"{c.max_residual:.3e}",
                    "passed": c.passed,
                }
                for c in report.checks
            ]
        )
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def _displacement(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    _, test = load_splits(cfg)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    reports = [
        orbit_displacement(kind, test, cfg.ood, args.draws, cfg.k, cfg.group_only_reading)
        for kind in cfg.kinds
    ]
    rows = [
        {"kind": report.kind.value, **asdict(block)}
        for report in reports
        for block in (*report.blocks, report.overall)
    ]
    pd.DataFrame(rows).to_csv(
        cfg.output_dir / f"displacement_k{cfg.k}.csv", index=False, float_format="%.6e"
    )
    for report in reports:
        dump_record(cfg.output_dir / f"displacement_{report.kind.value}_k{cfg.k}.json", report)
    _print_table(rows)

    passed = True
    for report in reports:
        if report.kind is RepresentationKind.GROUP_POSET:
            spectral = [b for b in report.blocks if b.block != "amplitude"]
            passed &= all(b.mean_relative <= SPECTRAL_DISPLACEMENT_LIMIT for b in spectral)
        if report.kind is RepresentationKind.BASELINE_RAW:
            passed &= report.overall.mean_relative >= BASELINE_DISPLACEMENT_FLOOR
    if args.check and not passed:
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _add_command(
    subparsers: argparse._SubParsersAction[_ArgumentParser],
    name: str,
    handler: Callable[[ExperimentConfig, argparse.Namespace], int],
    parent: argparse.ArgumentParser,
    description: str,
) -> argparse.ArgumentParser:
    parser = subparsers.add_parser(name, parents=[parent], help=description)
    parser.set_defaults(handler=handler)
    return parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="Configuration file of key = value lines")
    common.add_argument("--data-root", help="Directory holding 'UCI HAR Dataset'")
    common.add_argument("--acc-variant", choices=["body", "total"])
    common.add_argument("--output-dir", help="Directory of the outputs")
    common.add_argument("--kinds", help="Comma-separated representations, all by default")
    common.add_argument("--k", action="append", help="Number of retained bins, repeatable")
    common.add_argument("--seeds", help="Comma-separated seeds of the OOD realizations")
    common.add_argument("--ood-seed", help="Seed of single OOD realizations")
    common.add_argument("--group-only-reading", choices=["per_sensor", "per_axis"])
    common.add_argument("--no-amplitude-log", action="store_true")
    common.add_argument("--no-rotations", action="store_true")

    parser = _ArgumentParser(
        prog="equihar", description="Category-equivariant HAR features and OOD benchmark"
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")
    subparsers = parser.add_subparsers(dest="command", required=True)

    _add_command(subparsers, "fetch", _fetch, common, "Download and verify the dataset")
    _add_command(subparsers, "extract", _extract, common, "Write feature matrices as CSV")

    train = _add_command(subparsers, "train", _train, common, "Train heads on clean windows")
    train.add_argument("--spectral-only", action="store_true")

    eval_ = _add_command(subparsers, "eval", _eval, common, "Evaluate heads on the test set")
    eval_.add_argument("--spectral-only", action="store_true")

    ood_eval = _add_command(
        subparsers, "ood-eval", _ood_eval, common, "Evaluate heads on perturbed test sets"
    )
    ood_eval.add_argument("--spectral-only", action="store_true")
    ood_eval.add_argument("--time-gain-only", action="store_true")

    ablate = _add_command(subparsers, "ablate", _ablate, common, "Run the full benchmark")
    ablate.add_argument("--check", action="store_true", help="Exit 3 if a check fails")

    naturality = _add_command(
        subparsers, "naturality-test", _naturality_test, common, "Check naturality squares"
    )
    naturality.add_argument("--samples", type=int, default=100)
    naturality.add_argument("--composites", type=int, default=100)
    naturality.add_argument("--seed", type=int, default=0)
    naturality.add_argument("--fault-injection", action="store_true")

    displacement = _add_command(
        subparsers, "displacement", _displacement, common, "Measure orbit displacements"
    )
    displacement.add_argument("--draws", type=int, default=1)
    displacement.add_argument("--check", action="store_true", help="Exit 3 if a check fails")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)

    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = build_experiment_config(file_values, _overrides(args), os.environ)
        return args.handler(cfg, args)  # type: ignore[no-any-return]
    except ConfigError as error:
        logger.error("%s", error)
        return EXIT_USAGE
    except StageError as error:
        logger.error("%s", error)
        return EXIT_DATA if isinstance(error.cause, DataError) else EXIT_USAGE
    except DataError as error:
        logger.error("%s", error)
        return EXIT_DATA
    except EquiharError as error:
        logger.error("%s", error)
        return EXIT_USAGE
