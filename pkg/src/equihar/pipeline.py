"""
The experiments behind the command line: the OOD benchmark over representations and
seeds, and the naturality self-test of the category-equivariant feature maps.
"""

from __future__ import annotations

import logging
from collections.abc import Iterator, Sequence
from contextlib import contextmanager
from datetime import UTC, datetime
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np
import numpy.typing as npt
import pandas as pd

from equihar.codec import Record, RecordStore, dump_record, record
from equihar.config import ExperimentConfig
from equihar.dataset import (
    CLASSES,
    HarSplit,
    Split,
    fetch_dataset,
    load_split,
    split_checksums,
    validate_split,
)
from equihar.errors import StageError
from equihar.features import (
    DEFAULT_BINS,
    GroupPosetRepresentation,
    RepresentationKind,
    extract_batch,
    feature_dimension,
)
from equihar.learn import Metrics, TrainedHead, head_predict, score, train_head
from equihar.perturb import OodConfig, perturb_signals, sample_draws, write_draws_csv
from equihar.robustness import AuditResult, risk_invariance_audit
from equihar.signal import DEFAULT_PERIOD, magnitude_pool
from equihar.symmetry import (
    SENSORS,
    AxesData,
    GeneratorFamily,
    GroupElement,
    MagData,
    NodeData,
    NodeKind,
    PosetArrow,
    PosetNode,
    SensorId,
    TotalData,
    action_naturality_residual,
    feature_action_naturality_residual,
    generators,
    naturality_residual,
    poset_nodes,
    random_composite,
)

logger = logging.getLogger(__name__)

INCOMPLETE_MARKER = "INCOMPLETE"
"""
File present in an output directory while a run is in progress or after it failed.
"""

NATURALITY_TOLERANCE = 1e-8
MAX_COMPOSITE_LENGTH = 6
COMPOSITE_WINDOWS = 20
AGREEMENT_THRESHOLD = 0.999
ACCEPTANCE_BINS = DEFAULT_BINS

OOD_ORDER: tuple[RepresentationKind, ...] = (
    RepresentationKind.BASELINE_RAW,
    RepresentationKind.GROUP_ONLY,
    RepresentationKind.POSET_ONLY,
    RepresentationKind.GROUP_POSET,
)
"""
Representations by increasing expected OOD accuracy.
"""

OOD_ACCURACY_BANDS: dict[RepresentationKind, tuple[float, float]] = {
    RepresentationKind.BASELINE_RAW: (0.0, 0.25),
    RepresentationKind.GROUP_ONLY: (0.40, 0.49),
    RepresentationKind.POSET_ONLY: (0.55, 0.63),
    RepresentationKind.GROUP_POSET: (0.60, 0.68),
}
"""
Accepted ranges of the mean OOD accuracy with the default configuration.
"""


def package_version() -> str:
    try:
        return version("equihar")
    except PackageNotFoundError:
        return "unknown"


def head_name(kind: RepresentationKind, k: int, spectral_only: bool = False) -> str:
    suffix = "_spectral" if spectral_only else ""
    return f"{kind.value}_k{k}{suffix}"


def head_store(output_dir: Path) -> RecordStore:
    return RecordStore(output_dir / "store", {TrainedHead})


@contextmanager
def stage(name: str, output_dir: Path) -> Iterator[None]:
    """
    Run a pipeline stage, recording it in the incomplete marker of the output
    directory and wrapping any failure in a `StageError`.
    """
    marker = output_dir / INCOMPLETE_MARKER
    marker.write_text(f"stage: {name}\n")
    logger.info("Stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as error:
        marker.write_text(f"stage: {name}\nerror: {error}\n")
        raise StageError(name, error) from error


def load_splits(cfg: ExperimentConfig, fetch: bool = True) -> tuple[HarSplit, HarSplit]:
    """
    Load and validate the train and test splits, fetching the dataset if missing.
    """
    if fetch and not cfg.dataset.dataset_dir.is_dir():
        fetch_dataset(cfg.dataset)
    splits = []
    for split in (Split.TRAIN, Split.TEST):
        har_split = load_split(cfg.dataset, split)
        validate_split(har_split, cfg.dataset.period)
        splits.append(har_split)
    return splits[0], splits[1]


def evaluate(
    head: TrainedHead,
    har_split: HarSplit,
    ood: OodConfig | None = None,
) -> Metrics:
    """
    Evaluate a head on a split, perturbed by ``ood`` if given.
    """
    signals = har_split.signals if ood is None else perturb_signals(har_split.signals, ood)
    features = extract_batch(signals, head.kind, head.k, head.group_only_reading)
    return score(har_split.labels, head_predict(head, features), CLASSES)


@record
class RunMetrics(Record):
    kind: RepresentationKind
    k: int
    seed: int | None
    """
    Seed of the OOD realization, None for the clean test set.
    """

    accuracy: float
    weighted_f1: float


@record
class KindSummary(Record):
    kind: RepresentationKind
    k: int
    dimension: int
    clean_accuracy: float
    clean_weighted_f1: float
    ood_accuracy_mean: float
    ood_accuracy_std: float
    ood_weighted_f1_mean: float
    ood_weighted_f1_std: float
    single_draw_accuracy: float
    """
    OOD accuracy of the first seed alone.
    """

    single_draw_weighted_f1: float


@record(eq=False)
class BenchmarkReport(Record):
    config: ExperimentConfig
    version: str
    timestamp: str
    checksums: dict[str, str]
    runs: tuple[RunMetrics, ...]
    summaries: tuple[KindSummary, ...]
    gains: dict[str, float]
    """
    Differences of mean OOD accuracy between pairs of representations.
    """

    audit: AuditResult | None
    """
    Clean against time-and-gain-perturbed predictions of the spectral-only
    ``GROUP_POSET`` head.
    """

    acceptance: dict[str, bool]

    @property
    def accepted(self) -> bool:
        return all(self.acceptance.values())

    def summary(self, kind: RepresentationKind, k: int) -> KindSummary:
        for summary in self.summaries:
            if summary.kind is kind and summary.k == k:
                return summary
        raise KeyError(f"No summary for {kind.name} with k={k}")


def summarize(
    runs: Sequence[RunMetrics], kind: RepresentationKind, k: int, period: int = DEFAULT_PERIOD
) -> KindSummary:
    """
    Aggregate the runs of one representation: clean metrics, then mean and
    population standard deviation over the OOD seeds.
    """
    clean = next(r for r in runs if r.kind is kind and r.k == k and r.seed is None)
    ood = [r for r in runs if r.kind is kind and r.k == k and r.seed is not None]
    accuracies = np.array([r.accuracy for r in ood])
    f1s = np.array([r.weighted_f1 for r in ood])
    return KindSummary(
        kind=kind,
        k=k,
        dimension=feature_dimension(kind, k, period),
        clean_accuracy=clean.accuracy,
        clean_weighted_f1=clean.weighted_f1,
        ood_accuracy_mean=float(accuracies.mean()),
        ood_accuracy_std=float(accuracies.std()),
        ood_weighted_f1_mean=float(f1s.mean()),
        ood_weighted_f1_std=float(f1s.std()),
        single_draw_accuracy=ood[0].accuracy,
        single_draw_weighted_f1=ood[0].weighted_f1,
    )


def ablation_gains(summaries: Sequence[KindSummary]) -> dict[str, float]:
    """
    Compute the OOD accuracy gained by each ingredient: every representation
    against ``BASELINE_RAW``, and ``GROUP_POSET`` against each single-ingredient
    ablation.
    """
    pairs = [
        (RepresentationKind.GROUP_ONLY, RepresentationKind.BASELINE_RAW),
        (RepresentationKind.POSET_ONLY, RepresentationKind.BASELINE_RAW),
        (RepresentationKind.GROUP_POSET, RepresentationKind.BASELINE_RAW),
        (RepresentationKind.GROUP_POSET, RepresentationKind.POSET_ONLY),
        (RepresentationKind.GROUP_POSET, RepresentationKind.GROUP_ONLY),
    ]
    means = {(s.kind, s.k): s.ood_accuracy_mean for s in summaries}
    gains = {}
    for k in sorted({s.k for s in summaries}):
        for better, worse in pairs:
            if (better, k) in means and (worse, k) in means:
                gains[f"k{k}:{better.value}-{worse.value}"] = means[better, k] - means[worse, k]
    return gains


def acceptance_checks(
    summaries: Sequence[KindSummary], audit: AuditResult | None
) -> dict[str, bool]:
    """
    Compare benchmark results with the expected behavior at the default number of
    bins. Checks needing a missing representation are skipped.
    """
    means = {s.kind: s.ood_accuracy_mean for s in summaries if s.k == ACCEPTANCE_BINS}
    checks = {}
    if all(kind in means for kind in OOD_ORDER):
        ordered = [means[kind] for kind in OOD_ORDER]
        checks["ood_ordering"] = all(a < b for a, b in zip(ordered, ordered[1:], strict=False))
    for kind, (lo, hi) in OOD_ACCURACY_BANDS.items():
        if kind in means:
            checks[f"{kind.value}_ood_band"] = lo <= means[kind] <= hi
    if audit is not None:
        checks["exact_robustness_agreement"] = audit.agreement >= AGREEMENT_THRESHOLD
    return checks


def _write_tables(
    output_dir: Path, runs: Sequence[RunMetrics], summaries: Sequence[KindSummary]
) -> None:
    for k in sorted({s.k for s in summaries}):
        metrics = pd.DataFrame(
            [
                {
                    "kind": r.kind.value,
                    "condition": "clean" if r.seed is None else "ood",
                    "seed": "" if r.seed is None else r.seed,
                    "accuracy": r.accuracy,
                    "weighted_f1": r.weighted_f1,
                }
                for r in runs
                if r.k == k
            ]
        )
        metrics.to_csv(output_dir / f"metrics_k{k}.csv", index=False, float_format="%.6f")

        table = pd.DataFrame(
            [
                {
                    "kind": s.kind.value,
                    "dim": s.dimension,
                    "clean_accuracy": s.clean_accuracy,
                    "ood_accuracy_mean": s.ood_accuracy_mean,
                    "ood_accuracy_std": s.ood_accuracy_std,
                    "ood_weighted_f1_mean": s.ood_weighted_f1_mean,
                    "ood_weighted_f1_std": s.ood_weighted_f1_std,
                }
                for s in summaries
                if s.k == k
            ]
        )
        table.to_csv(output_dir / f"summary_k{k}.csv", index=False, float_format="%.6f")

        single_draw = pd.DataFrame(
            [
                {
                    "kind": s.kind.value,
                    "dim": s.dimension,
                    "accuracy": s.single_draw_accuracy,
                    "weighted_f1": s.single_draw_weighted_f1,
                }
                for s in summaries
                if s.k == k
            ]
        )
        single_draw.to_csv(output_dir / f"single_draw_k{k}.csv", index=False, float_format="%.6f")


def run_benchmark(
    cfg: ExperimentConfig,
    splits: tuple[HarSplit, HarSplit] | None = None,
    timestamp: str | None = None,
) -> BenchmarkReport:
    """
    Train every representation on clean training windows and evaluate it on the
    clean test set and on one perturbed test set per seed.

    Outputs written to the configured directory: per-run metrics, the mean and
    standard deviation table and the single-draw table (CSV, one per number of
    bins), the draws of every seed (CSV), the trained heads and ``summary.json``.
    An ``INCOMPLETE`` marker is present until the run succeeds.

    :param cfg: The experiment configuration.
    :param splits: Train and test splits, loaded from the dataset root by default.
    :param timestamp: The timestamp of the report, the current time by default.
    :return: The report written to ``summary.json``.
    """
    output_dir = cfg.output_dir
    output_dir.mkdir(parents=True, exist_ok=True)
    store = head_store(output_dir)

    checksums: dict[str, str] = {}
    with stage("load", output_dir):
        if splits is None:
            splits = load_splits(cfg)
            for split in (Split.TRAIN, Split.TEST):
                checksums |= split_checksums(cfg.dataset, split)
        train, test = splits

    perturbed: dict[int, npt.NDArray[np.float64]] = {}
    with stage("perturb", output_dir):
        for seed in cfg.seeds:
            ood = cfg.ood.with_seed(seed)
            perturbed[seed] = perturb_signals(test.signals, ood)
            write_draws_csv(output_dir / f"draws_seed{seed}.csv", sample_draws(ood, len(test)))

    runs: list[RunMetrics] = []
    summaries: list[KindSummary] = []
    for k in cfg.ks:
        for kind in cfg.kinds:
            with stage(f"train:{kind.value}:k{k}", output_dir):
                train_features = extract_batch(train.signals, kind, k, cfg.group_only_reading)
                head = train_head(
                    train_features,
                    train.labels,
                    kind,
                    k,
                    amplitude_log=cfg.amplitude_log,
                    group_only_reading=cfg.group_only_reading,
                )
                store.track(head_name(kind, k), head, replace=True)

            with stage(f"evaluate:{kind.value}:k{k}", output_dir):
                clean = evaluate(head, test)
                runs.append(RunMetrics(kind, k, None, clean.accuracy, clean.weighted_f1))
                for seed, signals in perturbed.items():
                    features = extract_batch(signals, kind, k, cfg.group_only_reading)
                    metrics = score(test.labels, head_predict(head, features), CLASSES)
                    runs.append(RunMetrics(kind, k, seed, metrics.accuracy, metrics.weighted_f1))
                    logger.info(
                        "kind=%s k=%d seed=%d accuracy=%.4f",
                        kind.value,
                        k,
                        seed,
                        metrics.accuracy,
                    )
            summaries.append(summarize(runs, kind, k, cfg.dataset.period))

    audit = None
    if RepresentationKind.GROUP_POSET in cfg.kinds:
        with stage("audit", output_dir):
            kind = RepresentationKind.GROUP_POSET
            spectral_head = train_head(
                extract_batch(train.signals, kind, cfg.k),
                train.labels,
                kind,
                cfg.k,
                spectral_only_view=True,
            )
            store.track(head_name(kind, cfg.k, spectral_only=True), spectral_head, replace=True)
            audit = risk_invariance_audit(
                spectral_head, kind, test, cfg.ood.time_gain_only(), seed=cfg.seeds[0]
            )

    with stage("report", output_dir):
        _write_tables(output_dir, runs, summaries)
        report = BenchmarkReport(
            config=cfg,
            version=package_version(),
            timestamp=timestamp or datetime.now(UTC).isoformat(),
            checksums=checksums,
            runs=tuple(runs),
            summaries=tuple(summaries),
            gains=ablation_gains(summaries),
            audit=audit,
            acceptance=acceptance_checks(summaries, audit),
        )
        dump_record(output_dir / "summary.json", report)

    (output_dir / INCOMPLETE_MARKER).unlink()
    logger.info("Benchmark complete, outputs in %s", output_dir)
    return report


@record
class ResidualCheck(Record):
    name: str
    max_residual: float
    passed: bool
    n_residuals: int


@record
class NaturalityReport(Record):
    n_samples: int
    seed: int
    tolerance: float
    fault_injection: bool
    checks: tuple[ResidualCheck, ...]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)


def node_data(
    node: PosetNode,
    window: npt.NDArray[np.float64],
    sensors: Sequence[SensorId] = SENSORS,
) -> NodeData:
    """
    Build signals at a node from a window of shape ``(sensors, 3, T)``.
    """
    blocks = dict(zip(sensors, window, strict=True))
    match node.kind:
        case NodeKind.AXES:
            assert node.sensor is not None
            return AxesData(sensor=node.sensor, window=blocks[node.sensor])
        case NodeKind.MAG:
            assert node.sensor is not None
            return MagData(sensor=node.sensor, series=magnitude_pool(blocks[node.sensor]))
        case NodeKind.TOTAL:
            return TotalData(series={s: magnitude_pool(w) for s, w in blocks.items()})


def _check(name: str, residuals: Sequence[float], tolerance: float) -> ResidualCheck:
    worst = max(residuals)
    return ResidualCheck(
        name=name, max_residual=worst, passed=worst <= tolerance, n_residuals=len(residuals)
    )


def run_naturality_suite(
    n_samples: int = 100,
    seed: int = 0,
    fault_injection: bool = False,
    n_composites: int = 100,
    composite_windows: int = COMPOSITE_WINDOWS,
    k: int = DEFAULT_BINS,
    period: int = DEFAULT_PERIOD,
    tolerance: float = NATURALITY_TOLERANCE,
) -> NaturalityReport:
    """
    Check the naturality squares of the ``GROUP_POSET`` feature maps on random
    synthetic windows: every generator, random composites of generators, and the
    compatibility of the group action with the hierarchy maps.

    :param n_samples: The number of synthetic windows.
    :param seed: The seed of the windows and composites.
    :param fault_injection: Skip normalization in the feature maps, which must make
        the gain generators fail.
    :param n_composites: The number of random composites.
    :param composite_windows: The number of windows every composite is checked on, at
        most ``n_samples``.
    :param k: The number of retained bins.
    :param period: The window length.
    :param tolerance: The largest accepted relative residual.
    :return: The largest residual of every check.
    """
    if n_samples == 0:
        logger.warning("No samples requested, the naturality suite passes vacuously")
        return NaturalityReport(
            n_samples=0, seed=seed, tolerance=tolerance, fault_injection=fault_injection, checks=()
        )

    rng = np.random.Generator(np.random.Philox(key=seed))
    sensors = SENSORS
    windows = rng.standard_normal((n_samples, len(sensors), 3, period))
    representation = GroupPosetRepresentation(
        k=k, sensors=sensors, skip_normalization=fault_injection
    )

    checks = []
    for generator in generators(sensors, period):
        m = generator.morphism
        name = f"{generator.family.value} {m.source} -> {m.target}"
        if generator.family is GeneratorFamily.GAIN:
            name += " " + ",".join(s.name for s in m.group.gains)
        residuals = [
            naturality_residual(m, representation, node_data(m.source, w, sensors), sensors)
            for w in windows
        ]
        checks.append(_check(name, residuals, tolerance))

    nodes = poset_nodes(sensors)
    composite_residuals = []
    for _ in range(n_composites):
        source = nodes[int(rng.integers(len(nodes)))]
        length = int(rng.integers(1, MAX_COMPOSITE_LENGTH + 1))
        m = random_composite(rng, source, length, sensors, period)
        picked = rng.choice(n_samples, size=min(composite_windows, n_samples), replace=False)
        composite_residuals.extend(
            naturality_residual(m, representation, node_data(source, windows[i], sensors), sensors)
            for i in picked
        )
    if composite_residuals:
        checks.append(_check("random composites", composite_residuals, tolerance))

    arrows = [
        arrow
        for s in sensors
        for arrow in (
            PosetArrow.axes_to_mag(s),
            PosetArrow.mag_to_total(s),
            PosetArrow.axes_to_total(s),
        )
    ]
    signal_residuals = []
    feature_residuals = []
    for w in windows:
        group = GroupElement(
            shift=int(rng.integers(period)),
            gains={s: float(rng.uniform(0.5, 2.0)) for s in sensors},
            period=period,
        )
        for arrow in arrows:
            data = node_data(arrow.source, w, sensors)
            signal_residuals.append(action_naturality_residual(group, arrow, data, sensors))
            feature_residuals.append(
                feature_action_naturality_residual(
                    group, arrow, representation.represent(data), sensors
                )
            )
    checks.append(_check("group action on signals", signal_residuals, tolerance))
    checks.append(_check("group action on features", feature_residuals, tolerance))

    report = NaturalityReport(
        n_samples=n_samples,
        seed=seed,
        tolerance=tolerance,
        fault_injection=fault_injection,
        checks=tuple(checks),
    )
    for check in report.checks:
        log = logger.info if check.passed else logger.error
        log("%-40s max residual %.3e", check.name, check.max_residual)
    return report
