"""
Diagnostics for robustness claims: how far features move along perturbation orbits,
and whether a trained head keeps its predictions under perturbation.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence

import numpy as np
import numpy.typing as npt

from equihar.codec import Record, record
from equihar.dataset import HarSplit
from equihar.errors import DataError
from equihar.features import (
    DEFAULT_BINS,
    GroupOnlyReading,
    RepresentationKind,
    extract_batch,
    feature_dimension,
)
from equihar.learn import Metrics, TrainedHead, head_predict, score
from equihar.perturb import OodConfig, perturb_signals
from equihar.signal import DEFAULT_PERIOD
from equihar.symmetry import SENSORS, SensorId

logger = logging.getLogger(__name__)


def feature_blocks(
    kind: RepresentationKind,
    k: int = DEFAULT_BINS,
    period: int = DEFAULT_PERIOD,
    sensors: Sequence[SensorId] = SENSORS,
) -> dict[str, slice]:
    """
    Partition the feature vector of a representation into named blocks.
    """
    n_sensors = len(sensors)
    width = feature_dimension(kind, k, period, n_sensors)
    if kind is RepresentationKind.GROUP_POSET:
        blocks = {f"{s.value}_spectrum": slice(i * k, (i + 1) * k) for i, s in enumerate(sensors)}
        blocks["total_spectrum"] = slice(n_sensors * k, (n_sensors + 1) * k)
        blocks["amplitude"] = slice((n_sensors + 1) * k, width)
        return blocks
    per_sensor = width // n_sensors
    suffix = "raw" if kind is RepresentationKind.BASELINE_RAW else "spectrum"
    return {
        f"{s.value}_{suffix}": slice(i * per_sensor, (i + 1) * per_sensor)
        for i, s in enumerate(sensors)
    }


@record
class BlockDisplacement(Record):
    block: str
    mean: float
    max: float
    mean_relative: float
    """
    Mean of the displacement divided by the clean block norm, or by 1 where that
    norm is zero.
    """

    max_relative: float


@record
class DisplacementReport(Record):
    kind: RepresentationKind
    n_windows: int
    n_draws: int
    seed: int
    blocks: tuple[BlockDisplacement, ...]
    overall: BlockDisplacement

    def block(self, name: str) -> BlockDisplacement:
        for displacement in self.blocks:
            if displacement.block == name:
                return displacement
        raise KeyError(f"No block named: {name}")


def block_displacements(
    clean: npt.NDArray[np.float64],
    perturbed: npt.NDArray[np.float64],
    columns: slice,
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """
    Per-window displacement of a block of features.

    :param clean: Features of the clean windows.
    :param perturbed: Features of the perturbed windows, row for row.
    :param columns: The block.
    :return: Absolute and relative displacements.
    """
    absolute = np.linalg.norm(perturbed[:, columns] - clean[:, columns], axis=1)
    reference = np.linalg.norm(clean[:, columns], axis=1)
    return absolute, absolute / np.where(reference > 0, reference, 1.0)


def _summarize(
    name: str, absolute: npt.NDArray[np.float64], relative: npt.NDArray[np.float64]
) -> BlockDisplacement:
    return BlockDisplacement(
        block=name,
        mean=float(np.mean(absolute)),
        max=float(np.max(absolute)),
        mean_relative=float(np.mean(relative)),
        max_relative=float(np.max(relative)),
    )


def orbit_displacement(
    kind: RepresentationKind,
    har_split: HarSplit,
    cfg: OodConfig,
    n_draws: int = 1,
    k: int = DEFAULT_BINS,
    group_only_reading: GroupOnlyReading = GroupOnlyReading.PER_SENSOR,
) -> DisplacementReport:
    """
    Estimate the expected displacement of features along perturbation orbits.

    Window ``i`` under draw ``j`` is perturbed with the draw of index
    ``j * len(har_split) + i``.

    :param kind: The representation.
    :param har_split: The windows to perturb.
    :param cfg: The perturbation law and seed.
    :param n_draws: The number of draws per window.
    :param k: The number of retained bins.
    :param group_only_reading: Where ``GROUP_ONLY`` normalizes.
    :return: Statistics per feature block and over the whole vector.
    """
    if n_draws < 1:
        raise ValueError(f"Number of draws must be positive: {n_draws}")
    if len(har_split) == 0:
        raise ValueError("Cannot measure displacement on an empty split")

    signals = har_split.signals
    n_windows = len(har_split)
    period = signals.shape[-1]
    blocks = feature_blocks(kind, k, period)
    whole = slice(0, feature_dimension(kind, k, period))

    clean = extract_batch(signals, kind, k, group_only_reading)
    collected: dict[str, tuple[list[npt.NDArray[np.float64]], list[npt.NDArray[np.float64]]]] = {
        name: ([], []) for name in [*blocks, "overall"]
    }
    for draw in range(n_draws):
        perturbed = extract_batch(
            perturb_signals(signals, cfg, offset=draw * n_windows), kind, k, group_only_reading
        )
        for name, columns in [*blocks.items(), ("overall", whole)]:
            absolute, relative = block_displacements(clean, perturbed, columns)
            collected[name][0].append(absolute)
            collected[name][1].append(relative)

    summaries = {
        name: _summarize(name, np.concatenate(absolute), np.concatenate(relative))
        for name, (absolute, relative) in collected.items()
    }
    overall = summaries.pop("overall")
    logger.info(
        "Orbit displacement of %s: windows=%d draws=%d mean_relative=%.3e",
        kind.value,
        n_windows,
        n_draws,
        overall.mean_relative,
    )
    return DisplacementReport(
        kind=kind,
        n_windows=n_windows,
        n_draws=n_draws,
        seed=cfg.seed,
        blocks=tuple(summaries.values()),
        overall=overall,
    )


@record(eq=False)
class AuditResult(Record):
    clean: Metrics
    perturbed: Metrics
    agreement: float
    """
    Fraction of windows whose predicted label survives the perturbation.
    """


def risk_invariance_audit(
    head: TrainedHead,
    kind: RepresentationKind,
    har_split: HarSplit,
    cfg: OodConfig,
    seed: int | None = None,
) -> AuditResult:
    """
    Evaluate the same head on clean and perturbed windows.

    :param head: The trained head.
    :param kind: The representation the head was trained on.
    :param har_split: The evaluation windows.
    :param cfg: The perturbation law.
    :param seed: A seed replacing the one of ``cfg``.
    :return: Metrics on both sets and the prediction agreement rate.
    """
    if head.kind is not kind:
        raise ValueError(f"Head trained on {head.kind.name} cannot evaluate {kind.name}")
    if len(har_split) == 0:
        raise DataError(f"Cannot audit {kind.name} on an empty {har_split.split.value} split")
    if seed is not None:
        cfg = cfg.with_seed(seed)

    clean_features = extract_batch(har_split.signals, kind, head.k, head.group_only_reading)
    perturbed_features = extract_batch(
        perturb_signals(har_split.signals, cfg), kind, head.k, head.group_only_reading
    )
    clean_predictions = head_predict(head, clean_features)
    perturbed_predictions = head_predict(head, perturbed_features)
    classes = head.model.classes
    result = AuditResult(
        clean=score(har_split.labels, clean_predictions, classes),
        perturbed=score(har_split.labels, perturbed_predictions, classes),
        agreement=float(np.mean(clean_predictions == perturbed_predictions)),
    )
    logger.info(
        "Audit of %s: clean=%.4f perturbed=%.4f agreement=%.4f",
        kind.value,
        result.clean.accuracy,
        result.perturbed.accuracy,
        result.agreement,
    )
    return result
