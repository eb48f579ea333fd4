"""
Morphisms of the symmetry category: a group of time shifts and per-sensor gains,
times the thin sensor hierarchy ``s:axes -> s:mag -> TOTAL``, with their actions on
signals (X) and on features (Y).
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from enum import Enum
from typing import Protocol, TypeAlias, runtime_checkable

import numpy as np
import numpy.typing as npt

from equihar.codec import Record, record
from equihar.errors import (
    InvalidGroupElementError,
    NodeMismatchError,
    NotComposableError,
    UnsupportedRepresentationError,
)
from equihar.signal import (
    DEFAULT_PERIOD,
    TimeSeries,
    TriAxialWindow,
    circular_shift,
    magnitude_pool,
)


class SensorId(Enum):
    ACC = "acc"
    GYRO = "gyro"


SENSORS: tuple[SensorId, ...] = (SensorId.ACC, SensorId.GYRO)
"""
The default sensor set.
"""


class NodeKind(Enum):
    AXES = 0
    MAG = 1
    TOTAL = 2


@record
class PosetNode(Record):
    """
    Object of the sensor hierarchy.
    """

    kind: NodeKind
    sensor: SensorId | None = None

    def __post_init__(self) -> None:
        if (self.kind is NodeKind.TOTAL) != (self.sensor is None):
            raise ValueError(f"Invalid node: {self.kind.name} with sensor {self.sensor}")

    @staticmethod
    def axes(sensor: SensorId) -> PosetNode:
        return PosetNode(kind=NodeKind.AXES, sensor=sensor)

    @staticmethod
    def mag(sensor: SensorId) -> PosetNode:
        return PosetNode(kind=NodeKind.MAG, sensor=sensor)

    @staticmethod
    def total() -> PosetNode:
        return PosetNode(kind=NodeKind.TOTAL)

    def __str__(self) -> str:
        if self.sensor is None:
            return self.kind.name
        return f"{self.sensor.name}:{self.kind.name.lower()}"


def poset_nodes(sensors: Sequence[SensorId] = SENSORS) -> tuple[PosetNode, ...]:
    """
    Enumerate the objects of the sensor hierarchy.
    """
    nodes = [node for s in sensors for node in (PosetNode.axes(s), PosetNode.mag(s))]
    return (*nodes, PosetNode.total())


def _has_arrow(source: PosetNode, target: PosetNode) -> bool:
    if source == target:
        return True
    if target.kind is NodeKind.TOTAL:
        return source.kind is not NodeKind.TOTAL
    return (
        source.kind is NodeKind.AXES
        and target.kind is NodeKind.MAG
        and source.sensor == target.sensor
    )


class ArrowKind(Enum):
    IDENTITY = "identity"
    AXES_TO_MAG = "axes_to_mag"
    MAG_TO_TOTAL = "mag_to_total"
    AXES_TO_TOTAL = "axes_to_total"


@record
class PosetArrow(Record):
    """
    Arrow of the sensor hierarchy. The hierarchy is thin, so an arrow is determined by
    its endpoints.
    """

    source: PosetNode
    target: PosetNode

    def __post_init__(self) -> None:
        if not _has_arrow(self.source, self.target):
            raise NotComposableError(f"No arrow from {self.source} to {self.target}")

    @property
    def kind(self) -> ArrowKind:
        if self.source == self.target:
            return ArrowKind.IDENTITY
        if self.target.kind is NodeKind.MAG:
            return ArrowKind.AXES_TO_MAG
        if self.source.kind is NodeKind.MAG:
            return ArrowKind.MAG_TO_TOTAL
        return ArrowKind.AXES_TO_TOTAL

    @staticmethod
    def identity(node: PosetNode) -> PosetArrow:
        return PosetArrow(source=node, target=node)

    @staticmethod
    def axes_to_mag(sensor: SensorId) -> PosetArrow:
        return PosetArrow(source=PosetNode.axes(sensor), target=PosetNode.mag(sensor))

    @staticmethod
    def mag_to_total(sensor: SensorId) -> PosetArrow:
        return PosetArrow(source=PosetNode.mag(sensor), target=PosetNode.total())

    @staticmethod
    def axes_to_total(sensor: SensorId) -> PosetArrow:
        return PosetArrow(source=PosetNode.axes(sensor), target=PosetNode.total())


def compose_arrows(g: PosetArrow, f: PosetArrow) -> PosetArrow:
    """
    Compose two arrows, ``g`` after ``f``.
    """
    if f.target != g.source:
        raise NotComposableError(f"Cannot compose {f.target} -> with {g.source} ->")
    return PosetArrow(source=f.source, target=g.target)


@record
class GroupElement(Record):
    """
    Element ``(t, lambda)`` of the group of circular shifts and per-sensor gains.
    Sensors missing from ``gains`` have gain 1.
    """

    shift: int
    gains: dict[SensorId, float]
    period: int = DEFAULT_PERIOD

    def __post_init__(self) -> None:
        if self.period < 1:
            raise InvalidGroupElementError(f"Period must be positive: {self.period}")
        for sensor, gain in self.gains.items():
            if not (gain > 0 and math.isfinite(gain)):
                raise InvalidGroupElementError(f"Gain of {sensor.name} must be positive: {gain!r}")
        object.__setattr__(self, "shift", self.shift % self.period)

    def gain(self, sensor: SensorId) -> float:
        return self.gains.get(sensor, 1.0)

    @staticmethod
    def identity(period: int = DEFAULT_PERIOD) -> GroupElement:
        return GroupElement(shift=0, gains={}, period=period)

    def __mul__(self, other: GroupElement) -> GroupElement:
        if self.period != other.period:
            raise NotComposableError(f"Periods differ: {self.period} and {other.period}")
        sensors = [*self.gains, *(s for s in other.gains if s not in self.gains)]
        return GroupElement(
            shift=self.shift + other.shift,
            gains={s: self.gain(s) * other.gain(s) for s in sensors},
            period=self.period,
        )

    def inverse(self) -> GroupElement:
        return GroupElement(
            shift=-self.shift,
            gains={s: 1.0 / g for s, g in self.gains.items()},
            period=self.period,
        )


@record
class Morphism(Record):
    """
    Morphism ``(m, u): a -> b`` of the product category.
    """

    group: GroupElement
    arrow: PosetArrow

    @property
    def source(self) -> PosetNode:
        return self.arrow.source

    @property
    def target(self) -> PosetNode:
        return self.arrow.target

    @staticmethod
    def identity(node: PosetNode, period: int = DEFAULT_PERIOD) -> Morphism:
        return Morphism(group=GroupElement.identity(period), arrow=PosetArrow.identity(node))


def compose(g: Morphism, f: Morphism) -> Morphism:
    """
    Compose two morphisms, ``g`` after ``f``: shifts add, gains multiply and arrows
    compose.
    """
    return Morphism(group=g.group * f.group, arrow=compose_arrows(g.arrow, f.arrow))


@record(eq=False)
class AxesData(Record):
    sensor: SensorId
    window: TriAxialWindow

    @property
    def node(self) -> PosetNode:
        return PosetNode.axes(self.sensor)

    def as_vector(self) -> npt.NDArray[np.float64]:
        return self.window.ravel()


@record(eq=False)
class MagData(Record):
    sensor: SensorId
    series: TimeSeries

    @property
    def node(self) -> PosetNode:
        return PosetNode.mag(self.sensor)

    def as_vector(self) -> npt.NDArray[np.float64]:
        return self.series


@record(eq=False)
class TotalData(Record):
    series: dict[SensorId, TimeSeries]

    @property
    def node(self) -> PosetNode:
        return PosetNode.total()

    def as_vector(self) -> npt.NDArray[np.float64]:
        return np.concatenate([self.series[s] for s in sorted(self.series, key=_order)])


NodeData: TypeAlias = AxesData | MagData | TotalData


@record(eq=False)
class AxesFeature(Record):
    sensor: SensorId
    spectrum: npt.NDArray[np.float64]
    amplitude: float

    @property
    def node(self) -> PosetNode:
        return PosetNode.axes(self.sensor)

    def as_vector(self) -> npt.NDArray[np.float64]:
        return np.append(self.spectrum, self.amplitude)


@record(eq=False)
class MagFeature(Record):
    sensor: SensorId
    spectrum: npt.NDArray[np.float64]

    @property
    def node(self) -> PosetNode:
        return PosetNode.mag(self.sensor)

    def as_vector(self) -> npt.NDArray[np.float64]:
        return self.spectrum


@record(eq=False)
class TotalFeature(Record):
    spectrum: npt.NDArray[np.float64]

    @property
    def node(self) -> PosetNode:
        return PosetNode.total()

    def as_vector(self) -> npt.NDArray[np.float64]:
        return self.spectrum


NodeFeature: TypeAlias = AxesFeature | MagFeature | TotalFeature


def _order(sensor: SensorId) -> int:
    return list(SensorId).index(sensor)


def _check_period(group: GroupElement, series: npt.NDArray[np.float64]) -> None:
    if series.shape[-1] != group.period:
        raise ValueError(f"Group period {group.period} does not match length {series.shape[-1]}")


def _act_group_X(group: GroupElement, data: NodeData) -> NodeData:
    match data:
        case AxesData(sensor=s, window=w):
            _check_period(group, w)
            return AxesData(sensor=s, window=group.gain(s) * circular_shift(w, group.shift))
        case MagData(sensor=s, series=z):
            _check_period(group, z)
            return MagData(sensor=s, series=group.gain(s) * circular_shift(z, group.shift))
        case TotalData(series=series):
            for z in series.values():
                _check_period(group, z)
            return TotalData(
                series={
                    r: group.gain(r) * circular_shift(z, group.shift) for r, z in series.items()
                }
            )
    raise TypeError(f"Unsupported node data: {type(data)}")


def _act_arrow_X(arrow: PosetArrow, data: NodeData, sensors: Sequence[SensorId]) -> NodeData:
    match arrow.kind:
        case ArrowKind.IDENTITY:
            return data
        case ArrowKind.AXES_TO_MAG:
            assert isinstance(data, AxesData)
            return MagData(sensor=data.sensor, series=magnitude_pool(data.window))
        case ArrowKind.MAG_TO_TOTAL:
            assert isinstance(data, MagData)
            # Embedding into the sensor's coordinate, zeros elsewhere
            return TotalData(
                series={
                    r: data.series if r == data.sensor else np.zeros_like(data.series)
                    for r in sensors
                }
            )
        case ArrowKind.AXES_TO_TOTAL:
            assert isinstance(data, AxesData)
            mag = _act_arrow_X(PosetArrow.axes_to_mag(data.sensor), data, sensors)
            return _act_arrow_X(PosetArrow.mag_to_total(data.sensor), mag, sensors)


def act_X(m: Morphism, data: NodeData, sensors: Sequence[SensorId] = SENSORS) -> NodeData:
    """
    Transport signals along a morphism: the group action, then the hierarchy map.

    :param m: The morphism.
    :param data: Signals at the source node of the morphism.
    :param sensors: The sensor set of the TOTAL node.
    :return: Signals at the target node.
    """
    if data.node != m.source:
        raise NodeMismatchError(f"Data at {data.node} given to a morphism from {m.source}")
    return _act_arrow_X(m.arrow, _act_group_X(m.group, data), sensors)


def _act_group_Y(group: GroupElement, feature: NodeFeature) -> NodeFeature:
    # Spectra are fixed, only amplitudes carry the gain
    if isinstance(feature, AxesFeature):
        return AxesFeature(
            sensor=feature.sensor,
            spectrum=feature.spectrum,
            amplitude=group.gain(feature.sensor) * feature.amplitude,
        )
    return feature


def _act_arrow_Y(
    arrow: PosetArrow, feature: NodeFeature, sensors: Sequence[SensorId]
) -> NodeFeature:
    match arrow.kind:
        case ArrowKind.IDENTITY:
            return feature
        case ArrowKind.AXES_TO_MAG:
            assert isinstance(feature, AxesFeature)
            return MagFeature(sensor=feature.sensor, spectrum=feature.spectrum)
        case ArrowKind.MAG_TO_TOTAL | ArrowKind.AXES_TO_TOTAL:
            assert isinstance(feature, (AxesFeature, MagFeature))
            return TotalFeature(spectrum=feature.spectrum / len(sensors))


def act_Y(
    m: Morphism, feature: NodeFeature, sensors: Sequence[SensorId] = SENSORS
) -> NodeFeature:
    """
    Transport features along a morphism.

    :param m: The morphism.
    :param feature: Features at the source node of the morphism.
    :param sensors: The sensor set, whose size scales the arrows into TOTAL.
    :return: Features at the target node.
    """
    if feature.node != m.source:
        raise NodeMismatchError(f"Feature at {feature.node} given to a morphism from {m.source}")
    return _act_arrow_Y(m.arrow, _act_group_Y(m.group, feature), sensors)


@runtime_checkable
class NodeRepresentation(Protocol):
    """
    Family of feature maps, one per node of the hierarchy.
    """

    def represent(self, data: NodeData) -> NodeFeature:
        """
        Map signals at a node to features at the same node.

        :param data: The signals.
        :return: The features.
        """
        ...


def _relative_distance(
    actual: npt.NDArray[np.float64], expected: npt.NDArray[np.float64]
) -> float:
    scale = max(1.0, float(np.linalg.norm(expected)))
    return float(np.linalg.norm(actual - expected)) / scale


def naturality_residual(
    m: Morphism,
    representation: NodeRepresentation,
    data: NodeData,
    sensors: Sequence[SensorId] = SENSORS,
) -> float:
    """
    Measure how far the square ``Y(m) . Phi_a = Phi_b . X(m)`` is from commuting.

    :param m: The morphism, usually a generator.
    :param representation: The per-node feature maps.
    :param data: Signals at the source node.
    :param sensors: The sensor set.
    :return: The residual norm, relative to the represented transport when above 1.
    """
    if not isinstance(representation, NodeRepresentation):
        raise UnsupportedRepresentationError(
            f"Representation has no per-node maps: {representation!r}"
        )
    transported = act_Y(m, representation.represent(data), sensors).as_vector()
    represented = representation.represent(act_X(m, data, sensors)).as_vector()
    return _relative_distance(transported, represented)


def action_naturality_residual(
    group: GroupElement,
    arrow: PosetArrow,
    data: NodeData,
    sensors: Sequence[SensorId] = SENSORS,
) -> float:
    """
    Measure how far ``X(u) . A_a(m) = A_b(m) . X(u)`` is from commuting, i.e. whether
    the group action on signals is compatible with the hierarchy maps.
    """
    identity = GroupElement.identity(group.period)
    act_then_map = act_X(
        Morphism(group=identity, arrow=arrow),
        act_X(Morphism(group=group, arrow=PosetArrow.identity(arrow.source)), data, sensors),
        sensors,
    )
    map_then_act = act_X(
        Morphism(group=group, arrow=PosetArrow.identity(arrow.target)),
        act_X(Morphism(group=identity, arrow=arrow), data, sensors),
        sensors,
    )
    return _relative_distance(act_then_map.as_vector(), map_then_act.as_vector())


def feature_action_naturality_residual(
    group: GroupElement,
    arrow: PosetArrow,
    feature: NodeFeature,
    sensors: Sequence[SensorId] = SENSORS,
) -> float:
    """
    The same as `action_naturality_residual`, for the group action on features.
    """
    identity = GroupElement.identity(group.period)
    act_then_map = act_Y(
        Morphism(group=identity, arrow=arrow),
        act_Y(Morphism(group=group, arrow=PosetArrow.identity(arrow.source)), feature, sensors),
        sensors,
    )
    map_then_act = act_Y(
        Morphism(group=group, arrow=PosetArrow.identity(arrow.target)),
        act_Y(Morphism(group=identity, arrow=arrow), feature, sensors),
        sensors,
    )
    return _relative_distance(act_then_map.as_vector(), map_then_act.as_vector())


class GeneratorFamily(Enum):
    SHIFT = "shift"
    GAIN = "gain"
    AXES_TO_MAG = "axes_to_mag"
    MAG_TO_TOTAL = "mag_to_total"


@record
class Generator(Record):
    """
    Generating morphism: unit shift or single-sensor gain at some node, or an
    identity-group hierarchy arrow.
    """

    family: GeneratorFamily
    morphism: Morphism


def generators(
    sensors: Sequence[SensorId] = SENSORS,
    period: int = DEFAULT_PERIOD,
    gain: float = 2.0,
) -> tuple[Generator, ...]:
    """
    Enumerate the generating morphisms of the category.

    :param sensors: The sensor set.
    :param period: The window length.
    :param gain: The gain used by the single-sensor gain generators.
    :return: The generators, group generators at every node first.
    """
    identity = GroupElement.identity(period)
    unit_shift = GroupElement(shift=1, gains={}, period=period)
    result: list[Generator] = []
    for node in poset_nodes(sensors):
        result.append(
            Generator(
                family=GeneratorFamily.SHIFT,
                morphism=Morphism(group=unit_shift, arrow=PosetArrow.identity(node)),
            )
        )
        for s in sensors:
            result.append(
                Generator(
                    family=GeneratorFamily.GAIN,
                    morphism=Morphism(
                        group=GroupElement(shift=0, gains={s: gain}, period=period),
                        arrow=PosetArrow.identity(node),
                    ),
                )
            )
    for s in sensors:
        result.append(
            Generator(
                family=GeneratorFamily.AXES_TO_MAG,
                morphism=Morphism(group=identity, arrow=PosetArrow.axes_to_mag(s)),
            )
        )
        result.append(
            Generator(
                family=GeneratorFamily.MAG_TO_TOTAL,
                morphism=Morphism(group=identity, arrow=PosetArrow.mag_to_total(s)),
            )
        )
    return tuple(result)


def random_composite(
    rng: np.random.Generator,
    source: PosetNode,
    length: int,
    sensors: Sequence[SensorId] = SENSORS,
    period: int = DEFAULT_PERIOD,
    gain_range: tuple[float, float] = (0.5, 2.0),
) -> Morphism:
    """
    Compose a random chain of generators starting at a node.

    :param rng: The random generator.
    :param source: The source node of the composite.
    :param length: The number of generators in the chain, at least 1.
    :param sensors: The sensor set.
    :param period: The window length.
    :param gain_range: The range of the gains of gain generators.
    :return: The composite morphism.
    """
    if length < 1:
        raise ValueError(f"Composite length must be positive: {length}")
    result = Morphism.identity(source, period)
    for _ in range(length):
        gain = float(rng.uniform(*gain_range))
        candidates = [
            g.morphism
            for g in generators(sensors, period, gain)
            if g.morphism.source == result.target
        ]
        step = candidates[int(rng.integers(len(candidates)))]
        result = compose(step, result)
    return result
