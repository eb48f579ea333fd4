from __future__ import annotations

from pathlib import Path


class EquiharError(Exception):
    """
    The top class for errors raised by equihar.
    """


class InvalidGroupElementError(EquiharError, ValueError):
    """
    A time shift or gain does not describe an element of the symmetry group.
    """


class InvalidRotationError(EquiharError, ValueError):
    """
    A matrix is not a rotation within tolerance.
    """


class NotComposableError(EquiharError, ValueError):
    """
    Two morphisms do not compose because their endpoints differ.
    """


class NodeMismatchError(EquiharError, ValueError):
    """
    Node data or features do not sit at the source node of a morphism.
    """


class UnsupportedRepresentationError(EquiharError, TypeError):
    """
    A representation has no per-node maps.
    """


class ConfigError(EquiharError, ValueError):
    """
    A configuration value is missing, malformed or out of range.
    """


class DataError(EquiharError, ValueError):
    """
    The dataset on disk is missing, malformed or inconsistent.
    """


class InertialFileError(DataError):
    """
    A signal file contains a malformed line.
    """

    def __init__(self, path: Path, line_number: int | None, reason: str) -> None:
        """
        :param path: The offending file.
        :param line_number: The 1-based line number, if the error concerns a line.
        :param reason: What is wrong.
        """
        location = f"{path}:{line_number}" if line_number is not None else f"{path}"
        super().__init__(f"{location}: {reason}")
        self.path = path
        self.line_number = line_number


class RowCountMismatchError(DataError):
    """
    Files of the same split disagree on their number of rows.
    """


class LabelError(DataError):
    """
    A label file contains a class id outside the known classes.
    """


class ChecksumMismatchError(DataError):
    """
    A downloaded archive does not match its expected digest.
    """


class DownloadError(DataError):
    """
    An archive could not be downloaded.
    """


class TrainingError(EquiharError, RuntimeError):
    """
    The classifier could not be trained.
    """

    def __init__(self, message: str, iteration: int | None = None) -> None:
        """
        :param message: What went wrong.
        :param iteration: The optimizer iteration at which it went wrong, if known.
        """
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class StageError(EquiharError):
    """
    A pipeline stage failed.
    """

    def __init__(self, stage: str, cause: BaseException) -> None:
        """
        :param stage: The name of the failed stage.
        :param cause: The underlying error.
        """
        super().__init__(f"Stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
