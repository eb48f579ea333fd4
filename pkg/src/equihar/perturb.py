"""
Seeded test-time perturbations: a circular time shift shared by all channels of a
window, an independent gain per sensor and an independent Haar-uniform rotation per
tri-axial block.

Draws come from a counter-based generator keyed by ``(seed, window index, field)``,
so a draw does not depend on evaluation order, and switching rotations off leaves the
shifts and gains unchanged.
"""

from __future__ import annotations

from collections.abc import Sequence
from enum import IntEnum
from pathlib import Path

import numpy as np
import numpy.typing as npt
import pandas as pd

from equihar.codec import Record, record
from equihar.errors import ConfigError
from equihar.features import MultiSensorWindow
from equihar.signal import Rotation3, circular_shift, rotate, scale_gain
from equihar.symmetry import SENSORS, SensorId

IDENTITY_QUATERNION = (1.0, 0.0, 0.0, 0.0)


@record
class OodConfig(Record):
    shift_halfwidth: int = 18
    gain_lo: float = 0.7
    gain_hi: float = 1.4
    rotations_enabled: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.shift_halfwidth < 0:
            raise ConfigError(f"Shift half-width must be non-negative: {self.shift_halfwidth}")
        if not 0 < self.gain_lo <= self.gain_hi:
            raise ConfigError(f"Gains must satisfy 0 < lo <= hi: {self.gain_lo}, {self.gain_hi}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"Seed must be a 64-bit unsigned integer: {self.seed}")

    @staticmethod
    def identity(seed: int = 0) -> OodConfig:
        return OodConfig(
            shift_halfwidth=0, gain_lo=1.0, gain_hi=1.0, rotations_enabled=False, seed=seed
        )

    def time_gain_only(self) -> OodConfig:
        return OodConfig(
            shift_halfwidth=self.shift_halfwidth,
            gain_lo=self.gain_lo,
            gain_hi=self.gain_hi,
            rotations_enabled=False,
            seed=self.seed,
        )

    def with_seed(self, seed: int) -> OodConfig:
        return OodConfig(
            shift_halfwidth=self.shift_halfwidth,
            gain_lo=self.gain_lo,
            gain_hi=self.gain_hi,
            rotations_enabled=self.rotations_enabled,
            seed=seed,
        )


@record(eq=False)
class PerturbationDraw(Record):
    dt: int
    gains: dict[SensorId, float]
    quaternions: dict[SensorId, tuple[float, float, float, float]]
    """
    Unit quaternions ``(w, x, y, z)`` the rotations were built from.
    """

    @property
    def rotations(self) -> dict[SensorId, Rotation3]:
        return {s: quaternion_to_rotation(np.asarray(q)) for s, q in self.quaternions.items()}

    def inverse(self) -> PerturbationDraw:
        """
        Provide the draw undoing this one, with conjugate quaternions.
        """
        return PerturbationDraw(
            dt=-self.dt,
            gains={s: 1.0 / g for s, g in self.gains.items()},
            quaternions={s: (w, -x, -y, -z) for s, (w, x, y, z) in self.quaternions.items()},
        )


class DrawField(IntEnum):
    SHIFT = 0
    GAIN = 1
    ROTATION = 2


def substream(seed: int, index: int, field: DrawField) -> np.random.Generator:
    """
    Provide the generator for one field of one window's draw.

    Philox counters start at ``(0, 0, index, field)``; draws only advance the low
    words, so substreams of different windows or fields never overlap.
    """
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, index, int(field)]))


def quaternion_to_rotation(q: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    """
    Convert unit quaternions ``(..., 4)`` in ``(w, x, y, z)`` order to rotation
    matrices ``(..., 3, 3)``.
    """
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    matrix = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
    return np.moveaxis(matrix, (0, 1), (-2, -1))


def haar_quaternions(rng: np.random.Generator, size: int) -> npt.NDArray[np.float64]:
    """
    Sample unit quaternions whose rotations are Haar-uniform on SO(3): normalized
    vectors of four standard normals.
    """
    normals = rng.standard_normal((size, 4))
    quaternions = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    # q and -q give the same rotation, keep w >= 0 for a canonical audit trail
    return np.where(quaternions[:, :1] < 0, -quaternions, quaternions)


def sample_draw(
    cfg: OodConfig, index: int, sensors: Sequence[SensorId] = SENSORS
) -> PerturbationDraw:
    """
    Sample the perturbation of one window.

    :param cfg: The perturbation law and seed.
    :param index: The window index.
    :param sensors: The sensor set.
    :return: The draw, fully determined by ``(cfg, index)``.
    """
    h = cfg.shift_halfwidth
    dt = int(substream(cfg.seed, index, DrawField.SHIFT).integers(-h, h + 1))
    gain_values = substream(cfg.seed, index, DrawField.GAIN).uniform(
        cfg.gain_lo, cfg.gain_hi, size=len(sensors)
    )
    if cfg.rotations_enabled:
        rng = substream(cfg.seed, index, DrawField.ROTATION)
        quaternions = [tuple(float(c) for c in q) for q in haar_quaternions(rng, len(sensors))]
    else:
        quaternions = [IDENTITY_QUATERNION] * len(sensors)
    return PerturbationDraw(
        dt=dt,
        gains={s: float(g) for s, g in zip(sensors, gain_values, strict=True)},
        quaternions=dict(zip(sensors, quaternions, strict=True)),  # type: ignore[arg-type]
    )


def sample_draws(
    cfg: OodConfig, n_windows: int, sensors: Sequence[SensorId] = SENSORS
) -> list[PerturbationDraw]:
    return [sample_draw(cfg, i, sensors) for i in range(n_windows)]


def _perturb_block(
    block: npt.NDArray[np.float64], rotation: Rotation3, gain: float, dt: int
) -> npt.NDArray[np.float64]:
    return circular_shift(scale_gain(rotate(block, rotation), gain), dt)


def apply_draw(w: MultiSensorWindow, draw: PerturbationDraw) -> MultiSensorWindow:
    """
    Perturb a window: per sensor, rotate, then scale, then shift every channel by
    the shared time shift. The three steps commute.
    """
    rotations = draw.rotations
    blocks = {
        s: _perturb_block(block, rotations[s], draw.gains[s], draw.dt)
        for s, block in w.blocks.items()
    }
    return MultiSensorWindow(blocks=blocks, label=w.label)


def perturb_signals(
    signals: npt.NDArray[np.float64],
    cfg: OodConfig,
    sensors: Sequence[SensorId] = SENSORS,
    offset: int = 0,
) -> npt.NDArray[np.float64]:
    """
    Perturb a stack of windows ``(N, sensors, 3, T)``, window ``i`` with the draw of
    index ``offset + i``.
    """
    perturbed = np.empty_like(signals)
    for i, window in enumerate(signals):
        draw = sample_draw(cfg, offset + i, sensors)
        rotations = draw.rotations
        for j, s in enumerate(sensors):
            perturbed[i, j] = _perturb_block(window[j], rotations[s], draw.gains[s], draw.dt)
    return perturbed


def write_draws_csv(
    path: Path, draws: Sequence[PerturbationDraw], sensors: Sequence[SensorId] = SENSORS
) -> None:
    """
    Write draws as an audit CSV: window index, shift, gains and quaternions.
    """
    rows = [
        {
            "window": index,
            "dt": draw.dt,
            **{f"gain_{s.value}": draw.gains[s] for s in sensors},
            **{
                f"q{c}_{s.value}": q
                for s in sensors
                for c, q in zip("wxyz", draw.quaternions[s], strict=True)
            },
        }
        for index, draw in enumerate(draws)
    ]
    pd.DataFrame(rows).to_csv(path, index=False, float_format="%.17g")
