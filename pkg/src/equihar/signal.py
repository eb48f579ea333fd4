"""
Numeric primitives on sensor windows.

Every function acts on the trailing axes of its input, so the same call works for a
single series of shape ``(T,)`` or a tri-axial window of shape ``(3, T)`` and for any
stack of them, e.g. ``(N, sensors, 3, T)``.
"""

from __future__ import annotations

from typing import TypeAlias

import numpy as np
import numpy.typing as npt

from equihar.errors import InvalidGroupElementError, InvalidRotationError

DEFAULT_PERIOD = 128
"""
The default window length T.
"""

ROTATION_TOLERANCE = 1e-12

TimeSeries: TypeAlias = npt.NDArray[np.float64]
"""
Series of shape ``(..., T)``.
"""

TriAxialWindow: TypeAlias = npt.NDArray[np.float64]
"""
Tri-axial block of shape ``(..., 3, T)``, axes ordered x, y, z.
"""

Rotation3: TypeAlias = npt.NDArray[np.float64]
"""
Rotation matrix of shape ``(3, 3)``.
"""


def check_window(w: npt.ArrayLike, period: int = DEFAULT_PERIOD) -> TriAxialWindow:
    """
    Validate a tri-axial window.

    :param w: The candidate window.
    :param period: The expected window length.
    :return: The window as a float array.
    """
    array = np.asarray(w, dtype=np.float64)
    if array.ndim < 2 or array.shape[-2:] != (3, period):
        raise ValueError(f"Expected window shape (..., 3, {period}), got: {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ValueError("Window contains non-finite samples")
    return array


def as_rotation(matrix: npt.ArrayLike) -> Rotation3:
    """
    Validate a rotation matrix.

    :param matrix: The candidate 3x3 matrix.
    :return: The matrix as a float array.
    """
    rotation = np.asarray(matrix, dtype=np.float64)
    if rotation.shape != (3, 3):
        raise InvalidRotationError(f"Expected a 3x3 matrix, got shape: {rotation.shape}")
    orthogonality = np.max(np.abs(rotation.T @ rotation - np.eye(3)))
    if orthogonality > ROTATION_TOLERANCE:
        raise InvalidRotationError(f"Matrix is not orthonormal: {orthogonality:.3e}")
    determinant = np.linalg.det(rotation)
    if abs(determinant - 1.0) > ROTATION_TOLERANCE:
        raise InvalidRotationError(f"Matrix determinant is not 1: {determinant!r}")
    return rotation


def circular_shift(x: npt.NDArray[np.float64], t: int) -> npt.NDArray[np.float64]:
    """
    Shift along time so that ``output(n) = x((n + t) mod T)``.

    :param x: The series or window.
    :param t: The shift, any integer.
    :return: The shifted copy.
    """
    return np.roll(x, -(t % x.shape[-1]), axis=-1)


def scale_gain(w: TriAxialWindow, gain: float) -> TriAxialWindow:
    """
    Multiply every sample by a positive gain.

    :param w: The window.
    :param gain: The gain.
    :return: The rescaled window.
    """
    if not gain > 0 or not np.isfinite(gain):
        raise InvalidGroupElementError(f"Gain must be positive and finite: {gain!r}")
    return gain * w


def rotate(w: TriAxialWindow, rotation: Rotation3) -> TriAxialWindow:
    """
    Rotate the 3-vector of every sample.

    :param w: The window.
    :param rotation: The rotation matrix.
    :return: The rotated window.
    """
    rotation = as_rotation(rotation)
    return np.einsum("ij,...jn->...in", rotation, w)


def magnitude_pool(w: TriAxialWindow) -> TimeSeries:
    """
    Pool the axes into the pointwise Euclidean norm.
    """
    return np.sqrt(np.sum(np.square(w), axis=-2))


def block_l2_norm(w: TriAxialWindow) -> npt.NDArray[np.float64]:
    """
    Frobenius norm over all samples of all axes.
    """
    return np.sqrt(np.sum(np.square(w), axis=(-2, -1)))


def _safe_divide(
    x: npt.NDArray[np.float64], norm: npt.NDArray[np.float64]
) -> npt.NDArray[np.float64]:
    # N(0) = 0, no epsilon; a non-finite norm propagates
    zero = norm == 0
    return np.where(zero, 0.0, x / np.where(zero, 1.0, norm))


def rms_normalize(w: TriAxialWindow) -> TriAxialWindow:
    """
    Divide a window by its block norm, mapping an all-zero window to itself.
    """
    norm = block_l2_norm(w)[..., np.newaxis, np.newaxis]
    return _safe_divide(w, norm)


def normalize_1d(z: TimeSeries) -> TimeSeries:
    """
    Scale a series to unit norm, mapping the zero series to itself.
    """
    norm = np.sqrt(np.sum(np.square(z), axis=-1))[..., np.newaxis]
    return _safe_divide(z, norm)


def rfft_magnitude(z: TimeSeries, k: int) -> npt.NDArray[np.float64]:
    """
    Moduli of the unnormalized forward DFT at bins 1..k, the DC bin excluded.

    :param z: The series, of any length T.
    :param k: The number of retained bins, ``1 <= k <= T // 2``.
    :return: Array of shape ``(..., k)``.
    """
    period = z.shape[-1]
    if not 1 <= k <= period // 2:
        raise ValueError(f"Number of bins must be in [1, {period // 2}]: {k}")
    spectrum = np.fft.rfft(z, axis=-1)
    return np.abs(spectrum[..., 1 : k + 1])


def dft_magnitude_oracle(z: TimeSeries, k: int) -> npt.NDArray[np.float64]:
    """
    Quadratic-time DFT sum, used to check `rfft_magnitude`.

    :param z: A single series.
    :param k: The number of retained bins.
    :return: The moduli at bins 1..k.
    """
    period = z.shape[-1]
    n = np.arange(period)
    bins = np.arange(1, k + 1)[:, np.newaxis]
    kernel = np.exp(-2j * np.pi * bins * n / period)
    return np.abs(kernel @ z)
