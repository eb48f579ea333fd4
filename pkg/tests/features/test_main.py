from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from equihar.features import (
    GroupOnlyReading,
    GroupPosetRepresentation,
    MultiSensorWindow,
    RepresentationKind,
    amplitude_columns,
    extract,
    extract_batch,
    feature_dimension,
    feature_names,
    node_representation,
    phase_collision,
    phi_axes,
    phi_mag,
    phi_total,
    spectral_only,
    write_features_csv,
)
from equihar.signal import (
    circular_shift,
    dft_magnitude_oracle,
    magnitude_pool,
    normalize_1d,
    rotate,
    scale_gain,
)
from equihar.symmetry import AxesData, AxesFeature, SensorId
from tests.signal.objects import (
    PERIOD,
    SEEDS_MAX,
    random_rotation,
    random_series,
    random_window,
    random_windows,
    relative_error,
)

ACC = SensorId.ACC
GYRO = SensorId.GYRO

seeds = st.integers(min_value=0, max_value=SEEDS_MAX)
shifts = st.integers(min_value=0, max_value=PERIOD - 1)
gains = st.floats(min_value=0.05, max_value=20.0)


def _window(seed: int) -> MultiSensorWindow:
    return MultiSensorWindow(blocks={ACC: random_window(seed), GYRO: random_window(seed + 1)})


def test_feature_dimension() -> None:
    expected = {
        RepresentationKind.BASELINE_RAW: 768,
        RepresentationKind.GROUP_ONLY: 144,
        RepresentationKind.POSET_ONLY: 48,
        RepresentationKind.GROUP_POSET: 74,
    }
    windows = random_windows(0, 3)
    for kind, dimension in expected.items():
        assert feature_dimension(kind) == dimension
        assert len(feature_names(kind)) == dimension
        assert extract_batch(windows, kind).shape == (3, dimension)


def test_feature_names() -> None:
    names = feature_names(RepresentationKind.GROUP_POSET)
    assert names[0] == "acc_spec_01"
    assert names[48] == "total_spec_01"
    assert names[-2:] == ["amp_acc", "amp_gyro"]
    assert feature_names(RepresentationKind.BASELINE_RAW)[1] == "acc_x_001"


def test_phi_mag() -> None:
    np.testing.assert_array_equal(phi_mag(np.zeros(PERIOD)), np.zeros(24))

    n = np.arange(PERIOD)
    cosine = np.cos(2 * np.pi * 2 * n / PERIOD)
    spectrum = phi_mag(cosine)
    np.testing.assert_allclose(spectrum, dft_magnitude_oracle(normalize_1d(cosine), 24), atol=1e-9)
    assert int(np.argmax(spectrum)) == 1
    assert spectrum[1] == pytest.approx(8.0, rel=1e-12)


@given(seeds, shifts, gains)
def test_phi_mag_invariance(seed: int, t: int, gain: float) -> None:
    z = np.abs(random_series(seed))
    assert relative_error(phi_mag(gain * circular_shift(z, t)), phi_mag(z)) <= 1e-9


def test_phi_axes() -> None:
    spectrum, amplitude = phi_axes(np.zeros((3, PERIOD)))
    np.testing.assert_array_equal(spectrum, np.zeros(24))
    assert amplitude == 0.0


@given(seeds, seeds, gains)
def test_phi_axes_invariance(seed: int, rotation_seed: int, gain: float) -> None:
    w = random_window(seed)
    spectrum, amplitude = phi_axes(w)
    scaled_spectrum, scaled_amplitude = phi_axes(scale_gain(w, gain))
    assert scaled_amplitude == pytest.approx(gain * amplitude, rel=1e-14)
    assert relative_error(scaled_spectrum, spectrum) <= 1e-9

    rotated_spectrum, rotated_amplitude = phi_axes(rotate(w, random_rotation(rotation_seed)))
    assert relative_error(rotated_spectrum, spectrum) <= 1e-9
    assert rotated_amplitude == pytest.approx(amplitude, rel=1e-12)


def test_phi_total() -> None:
    z = np.abs(random_series(5))
    np.testing.assert_allclose(phi_total({ACC: z, GYRO: z}), phi_mag(z), rtol=1e-15)
    np.testing.assert_allclose(
        phi_total({ACC: np.zeros(PERIOD), GYRO: z}), phi_mag(z) / 2, rtol=1e-15
    )
    with pytest.raises(ValueError):
        phi_total({ACC: z})


@given(seeds, shifts, gains, gains)
def test_phi_total_invariance(seed: int, t: int, acc_gain: float, gyro_gain: float) -> None:
    mags = {ACC: np.abs(random_series(seed)), GYRO: np.abs(random_series(seed + 1))}
    acted = {
        ACC: acc_gain * circular_shift(mags[ACC], t),
        GYRO: gyro_gain * circular_shift(mags[GYRO], t),
    }
    assert relative_error(phi_total(acted), phi_total(mags)) <= 1e-9


def test_phase_collision() -> None:
    z = random_series(6)
    for t in (1, 17, 64):
        assert phase_collision(z, t) <= 1e-12


def test_group_poset_matches_node_maps() -> None:
    window = _window(7)
    features = extract(window, RepresentationKind.GROUP_POSET).values
    representation = node_representation(RepresentationKind.GROUP_POSET)
    acc = representation.represent(AxesData(ACC, window.blocks[ACC]))
    gyro = representation.represent(AxesData(GYRO, window.blocks[GYRO]))
    assert isinstance(acc, AxesFeature)
    assert isinstance(gyro, AxesFeature)
    total = phi_total(
        {ACC: magnitude_pool(window.blocks[ACC]), GYRO: magnitude_pool(window.blocks[GYRO])}
    )
    np.testing.assert_allclose(features[:24], acc.spectrum, atol=1e-12)
    np.testing.assert_allclose(features[24:48], gyro.spectrum, atol=1e-12)
    np.testing.assert_allclose(features[48:72], total, atol=1e-12)
    np.testing.assert_allclose(features[72:], [acc.amplitude, gyro.amplitude], rtol=1e-14)


@given(seeds, shifts, gains, gains, seeds)
@settings(max_examples=1000)
def test_group_poset_invariance(
    seed: int, t: int, acc_gain: float, gyro_gain: float, rotation_seed: int
) -> None:
    window = _window(seed)
    sensor_gains = {ACC: acc_gain, GYRO: gyro_gain}
    rotations = {ACC: random_rotation(rotation_seed), GYRO: random_rotation(rotation_seed + 1)}
    perturbed = MultiSensorWindow(
        blocks={
            s: circular_shift(scale_gain(rotate(w, rotations[s]), sensor_gains[s]), t)
            for s, w in window.blocks.items()
        }
    )
    clean = extract(window, RepresentationKind.GROUP_POSET).values
    moved = extract(perturbed, RepresentationKind.GROUP_POSET).values
    assert relative_error(moved[:72], clean[:72]) <= 1e-9
    np.testing.assert_allclose(
        moved[72:], [acc_gain * clean[72], gyro_gain * clean[73]], rtol=1e-12
    )


def test_group_only() -> None:
    w = random_windows(8, 1)
    features = extract_batch(w, RepresentationKind.GROUP_ONLY)[0]
    moved = w.copy()
    moved[0, 0] = circular_shift(scale_gain(w[0, 0], 3.0), 11)
    assert relative_error(extract_batch(moved, RepresentationKind.GROUP_ONLY)[0], features) <= 1e-9

    rotated = w.copy()
    rotated[0, 0] = rotate(w[0, 0], random_rotation(8))
    assert relative_error(extract_batch(rotated, RepresentationKind.GROUP_ONLY)[0], features) >= 0.1


def test_group_only_per_axis() -> None:
    w = random_windows(9, 1)
    features = extract_batch(
        w, RepresentationKind.GROUP_ONLY, group_only_reading=GroupOnlyReading.PER_AXIS
    )
    np.testing.assert_allclose(features[0, 24:48], phi_mag(w[0, 0, 1]), atol=1e-12)
    assert not np.allclose(features, extract_batch(w, RepresentationKind.GROUP_ONLY))


def test_poset_only() -> None:
    w = random_windows(10, 1)
    features = extract_batch(w, RepresentationKind.POSET_ONLY)[0]
    rotated = w.copy()
    rotated[0, 1] = rotate(w[0, 1], random_rotation(10))
    rotated_features = extract_batch(rotated, RepresentationKind.POSET_ONLY)[0]
    assert relative_error(rotated_features, features) <= 1e-9
    np.testing.assert_allclose(
        extract_batch(2.0 * w, RepresentationKind.POSET_ONLY)[0], 2.0 * features, rtol=1e-12
    )
    np.testing.assert_allclose(
        features[:24], dft_magnitude_oracle(magnitude_pool(w[0, 0]), 24), atol=1e-9
    )


def test_baseline_raw() -> None:
    w = random_windows(11, 1)
    w[0, 1, 2] = 4.2
    features = extract_batch(w, RepresentationKind.BASELINE_RAW)[0].reshape(2, 3, PERIOD)
    np.testing.assert_array_equal(features[1, 2], np.zeros(PERIOD))
    np.testing.assert_allclose(features[0].mean(axis=-1), np.zeros(3), atol=1e-14)
    np.testing.assert_allclose(features[0].std(axis=-1), np.ones(3), rtol=1e-12)


def test_baseline_raw_affine_invariance() -> None:
    w = random_windows(17, 1)
    rng = np.random.default_rng(17)
    scales = rng.uniform(0.1, 10.0, size=(1, 2, 3, 1))
    offsets = rng.uniform(-5.0, 5.0, size=(1, 2, 3, 1))
    features = extract_batch(w, RepresentationKind.BASELINE_RAW)
    affine = extract_batch(scales * w + offsets, RepresentationKind.BASELINE_RAW)
    np.testing.assert_allclose(affine, features, atol=1e-9)

    shifted = circular_shift(w, 11)
    assert relative_error(extract_batch(shifted, RepresentationKind.BASELINE_RAW), features) >= 0.1
    rotated = w.copy()
    rotated[0, 0] = rotate(w[0, 0], random_rotation(17))
    assert relative_error(extract_batch(rotated, RepresentationKind.BASELINE_RAW), features) >= 0.1


def test_batch_independence() -> None:
    windows = random_windows(12, 6)
    for kind in RepresentationKind:
        batched = extract_batch(windows, kind)
        for i in (0, 5):
            single = extract(
                MultiSensorWindow(blocks={ACC: windows[i, 0], GYRO: windows[i, 1]}), kind
            ).values
            np.testing.assert_allclose(batched[i], single, rtol=1e-12, atol=1e-14)


def test_spectral_only() -> None:
    kind = RepresentationKind.GROUP_POSET
    assert amplitude_columns(kind) == slice(72, 74)
    assert amplitude_columns(RepresentationKind.POSET_ONLY) == slice(0, 0)
    features = extract_batch(random_windows(13, 4), kind)
    view = spectral_only(features, kind)
    assert view.shape == (4, 72)
    np.testing.assert_array_equal(view, features[:, :72])
    poset_only = extract_batch(random_windows(13, 4), RepresentationKind.POSET_ONLY)
    np.testing.assert_array_equal(
        spectral_only(poset_only, RepresentationKind.POSET_ONLY), poset_only
    )


def test_extract_rejects() -> None:
    with pytest.raises(ValueError):
        extract(MultiSensorWindow(blocks={ACC: random_window(0)}), RepresentationKind.GROUP_POSET)
    with pytest.raises(ValueError):
        extract_batch(np.zeros((2, 2, 2, PERIOD)), RepresentationKind.GROUP_POSET)
    with pytest.raises(ValueError):
        extract_batch(random_windows(0, 1), RepresentationKind.GROUP_POSET, k=PERIOD)
    broken = _window(14)
    broken.blocks[ACC][0, 0] = np.nan
    with pytest.raises(ValueError):
        extract(broken, RepresentationKind.GROUP_ONLY)


@pytest.mark.parametrize("value", [np.nan, np.inf, -np.inf])
@pytest.mark.parametrize("kind", list(RepresentationKind))
def test_extract_rejects_non_finite(kind: RepresentationKind, value: float) -> None:
    windows = random_windows(14, 3)
    windows[1, 1, 2, 40] = value
    with pytest.raises(ValueError):
        extract_batch(windows, kind)


def test_broken_representation_keeps_gain() -> None:
    w = random_window(15)
    broken = GroupPosetRepresentation(skip_normalization=True)
    clean = broken.represent(AxesData(ACC, w))
    scaled = broken.represent(AxesData(ACC, 2.0 * w))
    assert isinstance(clean, AxesFeature)
    assert isinstance(scaled, AxesFeature)
    np.testing.assert_allclose(scaled.spectrum, 2.0 * clean.spectrum, rtol=1e-12)


def test_write_features_csv(tmp_path: Path) -> None:
    kind = RepresentationKind.GROUP_POSET
    features = extract_batch(random_windows(16, 3), kind)
    labels = np.array([1, 4, 6])
    path = tmp_path / "features.csv"
    write_features_csv(path, features, kind, labels)

    frame = pd.read_csv(path, index_col="window", float_precision="round_trip")
    assert list(frame.columns) == [*feature_names(kind), "label"]
    assert frame["label"].tolist() == [1, 4, 6]
    np.testing.assert_array_equal(frame[feature_names(kind)].to_numpy(), features)


@pytest.mark.parametrize("period", [100, 127])
def test_extract_non_power_of_two(period: int) -> None:
    windows = random_windows(18, 2, period)
    for kind in RepresentationKind:
        features = extract_batch(windows, kind)
        assert features.shape == (2, feature_dimension(kind, period=period))
        assert np.all(np.isfinite(features))

    kind = RepresentationKind.GROUP_POSET
    features = extract_batch(windows, kind)
    moved = extract_batch(circular_shift(3.0 * windows, 37), kind)
    assert relative_error(moved[:, :72], features[:, :72]) <= 1e-9
    for i in range(2):
        pooled = magnitude_pool(windows[i, 0])
        np.testing.assert_allclose(
            features[i, :24], dft_magnitude_oracle(normalize_1d(pooled), 24), atol=1e-9
        )
