"""
The four representations compared by the benchmark.

``GROUP_POSET`` is the category-equivariant map: RMS normalization, axis-to-magnitude
pooling and low-frequency FFT magnitudes, with the functorial average at the TOTAL node
and the raw block amplitudes appended. The other kinds drop one ingredient each.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from enum import Enum
from pathlib import Path

import numpy as np
import numpy.typing as npt
import pandas as pd

from equihar.codec import Record, record
from equihar.errors import UnsupportedRepresentationError
from equihar.signal import (
    DEFAULT_PERIOD,
    TimeSeries,
    TriAxialWindow,
    block_l2_norm,
    check_window,
    circular_shift,
    magnitude_pool,
    normalize_1d,
    rfft_magnitude,
    rms_normalize,
)
from equihar.symmetry import (
    SENSORS,
    AxesData,
    AxesFeature,
    MagData,
    MagFeature,
    NodeData,
    NodeFeature,
    SensorId,
    TotalData,
    TotalFeature,
)

DEFAULT_BINS = 24
"""
The default number of retained frequency bins k.
"""

BASELINE_STD_FLOOR = 1e-12

AXES = ("x", "y", "z")


class RepresentationKind(Enum):
    BASELINE_RAW = "baseline_raw"
    GROUP_ONLY = "group_only"
    POSET_ONLY = "poset_only"
    GROUP_POSET = "group_poset"


class GroupOnlyReading(Enum):
    """
    Where ``GROUP_ONLY`` normalizes: once per sensor block, or again per axis.
    """

    PER_SENSOR = "per_sensor"
    PER_AXIS = "per_axis"


def feature_dimension(
    kind: RepresentationKind,
    k: int = DEFAULT_BINS,
    period: int = DEFAULT_PERIOD,
    n_sensors: int = len(SENSORS),
) -> int:
    """
    Provide the length of the feature vectors of a representation.
    """
    match kind:
        case RepresentationKind.BASELINE_RAW:
            return 3 * n_sensors * period
        case RepresentationKind.GROUP_ONLY:
            return 3 * n_sensors * k
        case RepresentationKind.POSET_ONLY:
            return n_sensors * k
        case RepresentationKind.GROUP_POSET:
            return (n_sensors + 1) * k + n_sensors


def feature_names(
    kind: RepresentationKind,
    k: int = DEFAULT_BINS,
    period: int = DEFAULT_PERIOD,
    sensors: Sequence[SensorId] = SENSORS,
) -> list[str]:
    """
    Provide the column names of the feature vectors of a representation.
    """
    bins = [f"{b:02d}" for b in range(1, k + 1)]
    match kind:
        case RepresentationKind.BASELINE_RAW:
            return [f"{s.value}_{a}_{n:03d}" for s in sensors for a in AXES for n in range(period)]
        case RepresentationKind.GROUP_ONLY:
            return [f"{s.value}_{a}_spec_{b}" for s in sensors for a in AXES for b in bins]
        case RepresentationKind.POSET_ONLY:
            return [f"{s.value}_mag_spec_{b}" for s in sensors for b in bins]
        case RepresentationKind.GROUP_POSET:
            return [
                *(f"{s.value}_spec_{b}" for s in sensors for b in bins),
                *(f"total_spec_{b}" for b in bins),
                *(f"amp_{s.value}" for s in sensors),
            ]


def amplitude_columns(
    kind: RepresentationKind,
    k: int = DEFAULT_BINS,
    n_sensors: int = len(SENSORS),
) -> slice:
    """
    Provide the columns holding amplitude scalars, empty for kinds without them.
    """
    if kind is not RepresentationKind.GROUP_POSET:
        return slice(0, 0)
    start = (n_sensors + 1) * k
    return slice(start, start + n_sensors)


def spectral_only(
    features: npt.NDArray[np.float64],
    kind: RepresentationKind,
    k: int = DEFAULT_BINS,
    n_sensors: int = len(SENSORS),
) -> npt.NDArray[np.float64]:
    """
    Drop the amplitude scalars, leaving the fully invariant spectral blocks.
    """
    columns = amplitude_columns(kind, k, n_sensors)
    return np.delete(features, np.arange(columns.start, columns.stop), axis=-1)


@record(eq=False)
class MultiSensorWindow(Record):
    """
    One window: a tri-axial block per sensor, plus an optional class id.
    """

    blocks: dict[SensorId, TriAxialWindow]
    label: int | None = None

    def stack(self, sensors: Sequence[SensorId] = SENSORS) -> npt.NDArray[np.float64]:
        """
        Stack the blocks into an array of shape ``(sensors, 3, T)``.
        """
        missing = [s.name for s in sensors if s not in self.blocks]
        if missing:
            raise ValueError(f"Window is missing sensors: {missing}")
        periods = {self.blocks[s].shape[-1] for s in sensors}
        if len(periods) != 1:
            raise ValueError(f"Sensor blocks have different lengths: {sorted(periods)}")
        return np.stack([self.blocks[s] for s in sensors])


@record(eq=False)
class FeatureVector(Record):
    values: npt.NDArray[np.float64]
    kind: RepresentationKind


def phi_mag(z: TimeSeries, k: int = DEFAULT_BINS) -> npt.NDArray[np.float64]:
    """
    Feature map at a magnitude node: FFT magnitudes of the unit-norm series.
    """
    return rfft_magnitude(normalize_1d(z), k)


def phi_axes(
    w: TriAxialWindow, k: int = DEFAULT_BINS
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """
    Feature map at an axes node.

    :param w: The tri-axial window, or a stack of them.
    :param k: The number of retained bins.
    :return: The spectrum of the pooled normalized window and the raw amplitude.
    """
    spectrum = phi_mag(magnitude_pool(rms_normalize(w)), k)
    return spectrum, block_l2_norm(w)


def phi_total(
    mags: Mapping[SensorId, TimeSeries],
    k: int = DEFAULT_BINS,
    sensors: Sequence[SensorId] = SENSORS,
) -> npt.NDArray[np.float64]:
    """
    Feature map at the TOTAL node: the average of the magnitude-node features.
    """
    missing = [s.name for s in sensors if s not in mags]
    if missing:
        raise ValueError(f"Magnitudes are missing sensors: {missing}")
    return sum((phi_mag(mags[s], k) for s in sensors), np.zeros(k)) / len(sensors)


def phase_collision(z: TimeSeries, t: int, k: int = DEFAULT_BINS) -> float:
    """
    Spectral distance between a series and its circular shift.

    The spectral blocks discard phase, so this is zero up to rounding for every shift:
    two signals differing only by phase are indistinguishable to them.
    """
    return float(np.linalg.norm(phi_mag(circular_shift(z, t), k) - phi_mag(z, k)))


class GroupPosetRepresentation:
    """
    The per-node feature maps of ``GROUP_POSET``.
    """

    def __init__(
        self,
        k: int = DEFAULT_BINS,
        sensors: Sequence[SensorId] = SENSORS,
        skip_normalization: bool = False,
    ) -> None:
        """
        :param k: The number of retained bins.
        :param sensors: The sensor set.
        :param skip_normalization: Drop every normalization step. Only useful to
            check that the naturality suite catches a broken representation.
        """
        self._k = k
        self._sensors = tuple(sensors)
        self._skip_normalization = skip_normalization

    def _phi_mag(self, z: TimeSeries) -> npt.NDArray[np.float64]:
        if self._skip_normalization:
            return rfft_magnitude(z, self._k)
        return phi_mag(z, self._k)

    def represent(self, data: NodeData) -> NodeFeature:
        match data:
            case AxesData(sensor=s, window=w):
                normalized = w if self._skip_normalization else rms_normalize(w)
                return AxesFeature(
                    sensor=s,
                    spectrum=self._phi_mag(magnitude_pool(normalized)),
                    amplitude=float(block_l2_norm(w)),
                )
            case MagData(sensor=s, series=z):
                return MagFeature(sensor=s, spectrum=self._phi_mag(z))
            case TotalData(series=series):
                spectra = [self._phi_mag(series[s]) for s in self._sensors]
                return TotalFeature(spectrum=sum(spectra, np.zeros(self._k)) / len(self._sensors))
        raise TypeError(f"Unsupported node data: {type(data)}")


def node_representation(
    kind: RepresentationKind,
    k: int = DEFAULT_BINS,
    sensors: Sequence[SensorId] = SENSORS,
) -> GroupPosetRepresentation:
    """
    Provide the per-node feature maps of a representation.

    Only ``GROUP_POSET`` is defined node by node; the ablations are flat vectors.
    """
    if kind is not RepresentationKind.GROUP_POSET:
        raise UnsupportedRepresentationError(f"Representation has no per-node maps: {kind.name}")
    return GroupPosetRepresentation(k=k, sensors=sensors)


def _zscore_channels(signals: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    mean = signals.mean(axis=-1, keepdims=True)
    std = signals.std(axis=-1, keepdims=True)
    flat = std < BASELINE_STD_FLOOR
    return np.where(flat, 0.0, (signals - mean) / np.where(flat, 1.0, std))


def extract_batch(
    signals: npt.NDArray[np.float64],
    kind: RepresentationKind,
    k: int = DEFAULT_BINS,
    group_only_reading: GroupOnlyReading = GroupOnlyReading.PER_SENSOR,
) -> npt.NDArray[np.float64]:
    """
    Extract features from a stack of windows.

    Every window is processed independently of the others, so results do not depend
    on how a dataset is split into batches.

    :param signals: Windows of shape ``(N, sensors, 3, T)``.
    :param kind: The representation.
    :param k: The number of retained bins.
    :param group_only_reading: Where ``GROUP_ONLY`` normalizes.
    :return: Features of shape ``(N, dimension)``.
    """
    if signals.ndim != 4 or signals.shape[-2] != 3:
        raise ValueError(f"Expected windows of shape (N, sensors, 3, T), got: {signals.shape}")
    n_windows, n_sensors, _, period = signals.shape
    signals = check_window(signals, period)

    match kind:
        case RepresentationKind.BASELINE_RAW:
            features = _zscore_channels(signals).reshape(n_windows, -1)
        case RepresentationKind.GROUP_ONLY:
            normalized = rms_normalize(signals)
            if group_only_reading is GroupOnlyReading.PER_AXIS:
                normalized = normalize_1d(normalized)
            features = rfft_magnitude(normalized, k).reshape(n_windows, -1)
        case RepresentationKind.POSET_ONLY:
            features = rfft_magnitude(magnitude_pool(signals), k).reshape(n_windows, -1)
        case RepresentationKind.GROUP_POSET:
            spectra, amplitudes = phi_axes(signals, k)
            total = spectra.sum(axis=1) / n_sensors
            features = np.concatenate(
                [spectra.reshape(n_windows, -1), total, amplitudes], axis=1
            )

    expected = feature_dimension(kind, k, period, n_sensors)
    if features.shape[1] != expected:
        raise ValueError(f"Expected {expected} features for {kind.name}, got {features.shape[1]}")
    return features


def extract(
    w: MultiSensorWindow,
    kind: RepresentationKind,
    k: int = DEFAULT_BINS,
    sensors: Sequence[SensorId] = SENSORS,
    group_only_reading: GroupOnlyReading = GroupOnlyReading.PER_SENSOR,
) -> FeatureVector:
    """
    Extract the features of a single window.
    """
    values = extract_batch(w.stack(sensors)[np.newaxis], kind, k, group_only_reading)[0]
    if not np.all(np.isfinite(values)):
        raise ValueError(f"Non-finite {kind.name} features")
    return FeatureVector(values=values, kind=kind)


def write_features_csv(
    path: Path,
    features: npt.NDArray[np.float64],
    kind: RepresentationKind,
    labels: npt.NDArray[np.int64] | None = None,
    k: int = DEFAULT_BINS,
    period: int = DEFAULT_PERIOD,
    sensors: Sequence[SensorId] = SENSORS,
) -> None:
    """
    Write a feature matrix as CSV, one window per row, with a header naming each
    feature and an optional trailing ``label`` column.
    """
    frame = pd.DataFrame(features, columns=feature_names(kind, k, period, sensors))
    if labels is not None:
        frame["label"] = labels
    frame.to_csv(path, index_label="window", float_format="%.17g")
