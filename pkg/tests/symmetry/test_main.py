from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from equihar.errors import (
    InvalidGroupElementError,
    NodeMismatchError,
    NotComposableError,
    UnsupportedRepresentationError,
)
from equihar.features import GroupPosetRepresentation, RepresentationKind, node_representation
from equihar.signal import circular_shift, magnitude_pool
from equihar.symmetry import (
    SENSORS,
    ArrowKind,
    AxesData,
    AxesFeature,
    GeneratorFamily,
    GroupElement,
    MagData,
    MagFeature,
    Morphism,
    PosetArrow,
    PosetNode,
    SensorId,
    TotalData,
    TotalFeature,
    act_X,
    act_Y,
    action_naturality_residual,
    compose,
    compose_arrows,
    feature_action_naturality_residual,
    generators,
    naturality_residual,
    poset_nodes,
    random_composite,
)
from tests.signal.objects import PERIOD, SEEDS_MAX, random_series, random_window

ACC = SensorId.ACC
GYRO = SensorId.GYRO

seeds = st.integers(min_value=0, max_value=SEEDS_MAX)


def _data_at(node: PosetNode, seed: int) -> AxesData | MagData | TotalData:
    windows = {s: random_window(seed + i) for i, s in enumerate(SENSORS)}
    if node == PosetNode.total():
        return TotalData(series={s: magnitude_pool(w) for s, w in windows.items()})
    assert node.sensor is not None
    if node == PosetNode.axes(node.sensor):
        return AxesData(sensor=node.sensor, window=windows[node.sensor])
    return MagData(sensor=node.sensor, series=magnitude_pool(windows[node.sensor]))


def _morphism(shift: int, gains: dict[SensorId, float], arrow: PosetArrow) -> Morphism:
    return Morphism(group=GroupElement(shift=shift, gains=gains), arrow=arrow)


def test_poset() -> None:
    nodes = poset_nodes()
    assert len(nodes) == 5
    assert str(PosetNode.axes(ACC)) == "ACC:axes"
    assert str(PosetNode.total()) == "TOTAL"
    assert PosetArrow.axes_to_total(GYRO).kind is ArrowKind.AXES_TO_TOTAL
    with pytest.raises(NotComposableError):
        PosetArrow(source=PosetNode.mag(ACC), target=PosetNode.axes(ACC))
    with pytest.raises(NotComposableError):
        PosetArrow(source=PosetNode.axes(ACC), target=PosetNode.mag(GYRO))
    with pytest.raises(ValueError):
        PosetNode(kind=PosetNode.total().kind, sensor=ACC)


def test_compose() -> None:
    f = _morphism(5, {}, PosetArrow.axes_to_mag(ACC))
    identity = Morphism.identity(PosetNode.mag(ACC))
    assert compose(identity, f) == f

    shifts = compose(
        _morphism(3, {}, PosetArrow.identity(PosetNode.total())),
        _morphism(5, {}, PosetArrow.identity(PosetNode.total())),
    )
    assert shifts == _morphism(8, {}, PosetArrow.identity(PosetNode.total()))

    arrows = compose_arrows(PosetArrow.mag_to_total(ACC), PosetArrow.axes_to_mag(ACC))
    assert arrows == PosetArrow.axes_to_total(ACC)

    with pytest.raises(NotComposableError):
        compose_arrows(PosetArrow.axes_to_mag(ACC), PosetArrow.axes_to_mag(ACC))


def test_group_element() -> None:
    g = GroupElement(shift=-3, gains={ACC: 2.0})
    assert g.shift == PERIOD - 3
    assert g.gain(GYRO) == 1.0
    product = g * g.inverse()
    assert product.shift == 0
    assert product.gain(ACC) == pytest.approx(1.0)
    with pytest.raises(InvalidGroupElementError):
        GroupElement(shift=0, gains={ACC: 0.0})
    with pytest.raises(InvalidGroupElementError):
        GroupElement(shift=0, gains={GYRO: -2.0})
    with pytest.raises(NotComposableError):
        _ = g * GroupElement(shift=0, gains={}, period=64)


def test_act_X() -> None:
    w = random_window(0)
    data = AxesData(sensor=ACC, window=w)
    np.testing.assert_array_equal(
        act_X(Morphism.identity(data.node), data).as_vector(), data.as_vector()
    )

    result = act_X(_morphism(7, {ACC: 1.5, GYRO: 3.0}, PosetArrow.axes_to_mag(ACC)), data)
    assert isinstance(result, MagData)
    np.testing.assert_allclose(
        result.series, 1.5 * circular_shift(magnitude_pool(w), 7), rtol=1e-14
    )

    z = random_series(1)
    total = act_X(_morphism(0, {ACC: 2.0}, PosetArrow.mag_to_total(ACC)), MagData(ACC, z))
    assert isinstance(total, TotalData)
    np.testing.assert_array_equal(total.series[ACC], 2.0 * z)
    np.testing.assert_array_equal(total.series[GYRO], np.zeros(PERIOD))

    with pytest.raises(NodeMismatchError):
        act_X(Morphism.identity(PosetNode.mag(ACC)), data)


def test_act_Y() -> None:
    spectrum = np.arange(1.0, 25.0)
    feature = AxesFeature(sensor=GYRO, spectrum=spectrum, amplitude=4.0)

    identity = act_Y(Morphism.identity(feature.node), feature)
    np.testing.assert_array_equal(identity.as_vector(), feature.as_vector())

    scaled = act_Y(_morphism(9, {GYRO: 0.5}, PosetArrow.identity(feature.node)), feature)
    assert isinstance(scaled, AxesFeature)
    assert scaled.amplitude == 2.0
    np.testing.assert_array_equal(scaled.spectrum, spectrum)

    pooled = act_Y(_morphism(9, {GYRO: 0.5}, PosetArrow.axes_to_mag(GYRO)), feature)
    assert isinstance(pooled, MagFeature)
    np.testing.assert_array_equal(pooled.spectrum, spectrum)

    total = act_Y(_morphism(0, {}, PosetArrow.mag_to_total(ACC)), MagFeature(ACC, spectrum))
    assert isinstance(total, TotalFeature)
    np.testing.assert_array_equal(total.spectrum, spectrum / 2)

    with pytest.raises(NodeMismatchError):
        act_Y(Morphism.identity(PosetNode.total()), feature)


def test_naturality_identity_is_exact() -> None:
    representation = GroupPosetRepresentation()
    for node in poset_nodes():
        data = _data_at(node, 0)
        assert naturality_residual(Morphism.identity(node), representation, data) == 0.0


def test_naturality_examples() -> None:
    representation = GroupPosetRepresentation()
    unit_shift = _morphism(1, {}, PosetArrow.identity(PosetNode.mag(ACC)))
    data = _data_at(PosetNode.mag(ACC), 1)
    assert naturality_residual(unit_shift, representation, data) <= 1e-9

    pooling = _morphism(0, {}, PosetArrow.axes_to_mag(GYRO))
    data = _data_at(PosetNode.axes(GYRO), 2)
    assert naturality_residual(pooling, representation, data) <= 1e-12


@given(seeds)
@settings(max_examples=20)
def test_naturality_generators(seed: int) -> None:
    representation = GroupPosetRepresentation()
    for generator in generators():
        m = generator.morphism
        assert naturality_residual(m, representation, _data_at(m.source, seed)) <= 1e-8


def test_generators() -> None:
    result = generators()
    # Unit shift and one gain per sensor at each node, then both arrows per sensor
    assert len(result) == 5 * 3 + 2 * 2
    families = [g.family for g in result]
    assert families.count(GeneratorFamily.AXES_TO_MAG) == 2
    assert families.count(GeneratorFamily.MAG_TO_TOTAL) == 2


@given(seeds, st.integers(min_value=1, max_value=6))
@settings(max_examples=50)
def test_naturality_random_composites(seed: int, length: int) -> None:
    rng = np.random.default_rng(seed)
    representation = GroupPosetRepresentation()
    nodes = poset_nodes()
    source = nodes[int(rng.integers(len(nodes)))]
    m = random_composite(rng, source, length)
    assert m.source == source
    assert naturality_residual(m, representation, _data_at(source, seed)) <= 1e-8


def test_naturality_catches_broken_representation() -> None:
    broken = GroupPosetRepresentation(skip_normalization=True)
    gain = _morphism(0, {ACC: 2.0}, PosetArrow.identity(PosetNode.mag(ACC)))
    assert naturality_residual(gain, broken, _data_at(PosetNode.mag(ACC), 3)) > 1e-3


def test_naturality_requires_node_maps() -> None:
    with pytest.raises(UnsupportedRepresentationError):
        naturality_residual(
            Morphism.identity(PosetNode.total()), object(), _data_at(PosetNode.total(), 0)
        )
    with pytest.raises(UnsupportedRepresentationError):
        node_representation(RepresentationKind.BASELINE_RAW)


@given(seeds, st.integers(min_value=0, max_value=PERIOD - 1))
@settings(max_examples=50)
def test_action_naturality(seed: int, shift: int) -> None:
    rng = np.random.default_rng(seed)
    group = GroupElement(shift=shift, gains={s: float(rng.uniform(0.5, 2.0)) for s in SENSORS})
    representation = GroupPosetRepresentation()
    for s in SENSORS:
        for arrow in (
            PosetArrow.axes_to_mag(s),
            PosetArrow.mag_to_total(s),
            PosetArrow.axes_to_total(s),
        ):
            data = _data_at(arrow.source, seed)
            assert action_naturality_residual(group, arrow, data) <= 1e-12
            feature = representation.represent(data)
            assert feature_action_naturality_residual(group, arrow, feature) <= 1e-12


def _arrow_between(source: PosetNode, target: PosetNode) -> PosetArrow | None:
    try:
        return PosetArrow(source=source, target=target)
    except NotComposableError:
        return None


def test_poset_is_thin() -> None:
    nodes = poset_nodes()
    arrows = {
        (a, b): arrow for a in nodes for b in nodes if (arrow := _arrow_between(a, b)) is not None
    }
    # Identities, axes -> mag per sensor, then axes and mag of each sensor into TOTAL
    assert len(arrows) == 5 + 2 + 4
    for a in nodes:
        for b in nodes:
            if a != b and (a, b) in arrows:
                assert (b, a) not in arrows
            for c in nodes:
                if (a, b) in arrows and (b, c) in arrows:
                    composite = compose_arrows(arrows[(b, c)], arrows[(a, b)])
                    assert composite == arrows[(a, c)]


def _relative_gap(actual: np.ndarray, expected: np.ndarray) -> float:
    return float(np.linalg.norm(actual - expected) / max(1.0, np.linalg.norm(expected)))


@given(seeds, st.integers(min_value=1, max_value=4), st.integers(min_value=1, max_value=4))
@settings(max_examples=100)
def test_actions_are_functorial(seed: int, f_length: int, g_length: int) -> None:
    rng = np.random.default_rng(seed)
    nodes = poset_nodes()
    source = nodes[int(rng.integers(len(nodes)))]
    f = random_composite(rng, source, f_length)
    g = random_composite(rng, f.target, g_length)
    data = _data_at(source, seed)

    direct = act_X(compose(g, f), data).as_vector()
    stepwise = act_X(g, act_X(f, data)).as_vector()
    assert _relative_gap(direct, stepwise) <= 1e-12

    feature = GroupPosetRepresentation().represent(data)
    direct = act_Y(compose(g, f), feature).as_vector()
    stepwise = act_Y(g, act_Y(f, feature)).as_vector()
    assert _relative_gap(direct, stepwise) <= 1e-12
