"""
Loading of the UCI HAR raw inertial signals, and an optional downloader.

The expected layout is the one of the official archive::

    <root>/UCI HAR Dataset/train/Inertial Signals/body_acc_x_train.txt
    <root>/UCI HAR Dataset/train/y_train.txt
    <root>/UCI HAR Dataset/test/...
"""

from __future__ import annotations

import hashlib
import logging
import time
import zipfile
from collections.abc import Callable
from enum import Enum
from pathlib import Path

import numpy as np
import numpy.typing as npt
import requests

from equihar.codec import Record, record
from equihar.errors import (
    ChecksumMismatchError,
    DataError,
    DownloadError,
    InertialFileError,
    LabelError,
    RowCountMismatchError,
)
from equihar.features import AXES, MultiSensorWindow
from equihar.signal import DEFAULT_PERIOD
from equihar.symmetry import SENSORS, SensorId

logger = logging.getLogger(__name__)

UCI_HAR_URL = (
    "https://archive.ics.uci.edu/static/public/240/"
    "human+activity+recognition+using+smartphones.zip"
)
DATASET_DIRNAME = "UCI HAR Dataset"
VERIFIED_MARKER = ".equihar-verified"

CLASSES: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
ACTIVITIES = {
    1: "WALKING",
    2: "WALKING_UPSTAIRS",
    3: "WALKING_DOWNSTAIRS",
    4: "SITTING",
    5: "STANDING",
    6: "LAYING",
}


class Split(Enum):
    TRAIN = "train"
    TEST = "test"


class AccVariant(Enum):
    """
    Which accelerometer signal to load: gravity removed, or as measured.
    """

    BODY = "body"
    TOTAL = "total"


@record
class DatasetConfig(Record):
    root: Path
    acc_variant: AccVariant = AccVariant.BODY
    download_url: str | None = UCI_HAR_URL
    expected_sha256: str | None = None
    period: int = DEFAULT_PERIOD

    @property
    def dataset_dir(self) -> Path:
        return self.root / DATASET_DIRNAME


@record(eq=False)
class HarSplit(Record):
    """
    One split of the dataset.
    """

    signals: npt.NDArray[np.float64]
    """
    Windows of shape ``(N, sensors, 3, T)``, sensors ordered as `SENSORS`.
    """

    labels: npt.NDArray[np.int64]
    split: Split
    subjects: npt.NDArray[np.int64] | None = None
    """
    Subject ids, parsed when present but unused by any result.
    """

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, index: int) -> MultiSensorWindow:
        return MultiSensorWindow(
            blocks={s: self.signals[index, i] for i, s in enumerate(SENSORS)},
            label=int(self.labels[index]),
        )

    @property
    def windows(self) -> list[MultiSensorWindow]:
        return [self[i] for i in range(len(self))]

    def subset(self, indices: npt.NDArray[np.int64]) -> HarSplit:
        return HarSplit(
            signals=self.signals[indices],
            labels=self.labels[indices],
            split=self.split,
            subjects=None if self.subjects is None else self.subjects[indices],
        )


def signal_paths(cfg: DatasetConfig, split: Split) -> dict[SensorId, list[Path]]:
    """
    Provide the signal files of a split, per sensor and ordered by axis.
    """
    signals_dir = cfg.dataset_dir / split.value / "Inertial Signals"
    prefixes = {SensorId.ACC: f"{cfg.acc_variant.value}_acc", SensorId.GYRO: "body_gyro"}
    return {
        s: [signals_dir / f"{prefixes[s]}_{a}_{split.value}.txt" for a in AXES] for s in SENSORS
    }


def label_path(cfg: DatasetConfig, split: Split) -> Path:
    return cfg.dataset_dir / split.value / f"y_{split.value}.txt"


def subject_path(cfg: DatasetConfig, split: Split) -> Path:
    return cfg.dataset_dir / split.value / f"subject_{split.value}.txt"


def _read_lines(path: Path) -> list[tuple[int, str]]:
    if not path.is_file():
        raise DataError(f"Missing file: {path}")
    lines = [
        (number, line)
        for number, line in enumerate(path.read_text().splitlines(), start=1)
        if line.strip()
    ]
    if not lines:
        raise InertialFileError(path, None, "empty file")
    return lines


def parse_inertial_file(path: Path, period: int = DEFAULT_PERIOD) -> npt.NDArray[np.float64]:
    """
    Parse a file of whitespace-separated samples, one window per line.

    :param path: The file.
    :param period: The expected number of samples per line.
    :return: Matrix of shape ``(rows, period)``, in file order.
    """
    rows = []
    for number, line in _read_lines(path):
        tokens = line.split()
        if len(tokens) != period:
            raise InertialFileError(path, number, f"expected {period} fields, found {len(tokens)}")
        try:
            row = np.array([float(token) for token in tokens])
        except ValueError as error:
            raise InertialFileError(path, number, f"unparseable token ({error})") from None
        if not np.all(np.isfinite(row)):
            raise InertialFileError(path, number, "non-finite sample")
        rows.append(row)
    return np.stack(rows)


def parse_id_file(path: Path) -> npt.NDArray[np.int64]:
    """
    Parse a file holding one integer per line, such as labels or subject ids.
    """
    ids = []
    for number, line in _read_lines(path):
        try:
            ids.append(int(line.strip()))
        except ValueError:
            raise InertialFileError(path, number, f"not an integer: {line.strip()!r}") from None
    return np.asarray(ids, dtype=np.int64)


def load_split(cfg: DatasetConfig, split: Split) -> HarSplit:
    """
    Load a split by zipping the rows of its six signal files with its labels.

    :param cfg: The dataset configuration.
    :param split: The split.
    :return: The loaded split.
    """
    paths = signal_paths(cfg, split)
    blocks = {s: [parse_inertial_file(p, cfg.period) for p in paths[s]] for s in SENSORS}
    labels_file = label_path(cfg, split)
    labels = parse_id_file(labels_file)

    counts = {p.name: len(m) for s in SENSORS for p, m in zip(paths[s], blocks[s], strict=True)}
    counts[labels_file.name] = len(labels)

    subjects = None
    if (subjects_file := subject_path(cfg, split)).is_file():
        subjects = parse_id_file(subjects_file)
        counts[subjects_file.name] = len(subjects)

    if len(set(counts.values())) != 1:
        listing = ", ".join(f"{name}={count}" for name, count in counts.items())
        raise RowCountMismatchError(f"Row counts differ in {split.value} split: {listing}")

    invalid = sorted(set(labels.tolist()) - set(CLASSES))
    if invalid:
        raise LabelError(f"Labels outside {CLASSES} in {labels_file}: {invalid}")

    # (sensors, axes, N, T) -> (N, sensors, axes, T)
    signals = np.ascontiguousarray(np.array([blocks[s] for s in SENSORS]).transpose(2, 0, 1, 3))
    logger.info("Loaded %s split: %d windows from %s", split.value, len(labels), cfg.dataset_dir)
    return HarSplit(signals=signals, labels=labels, split=split, subjects=subjects)


def validate_split(har_split: HarSplit, period: int = DEFAULT_PERIOD) -> None:
    """
    Check every window of a split: shapes, finiteness and labels.
    """
    n_windows = len(har_split)
    expected = (n_windows, len(SENSORS), 3, period)
    if har_split.signals.shape != expected:
        raise DataError(f"Expected signals of shape {expected}, got: {har_split.signals.shape}")
    if not np.all(np.isfinite(har_split.signals)):
        raise DataError(f"Non-finite samples in {har_split.split.value} split")
    if not np.isin(har_split.labels, CLASSES).all():
        raise LabelError(f"Labels outside {CLASSES} in {har_split.split.value} split")


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def split_checksums(cfg: DatasetConfig, split: Split) -> dict[str, str]:
    """
    Provide the SHA-256 digests of the files a split is loaded from.
    """
    paths = [p for ps in signal_paths(cfg, split).values() for p in ps]
    paths.append(label_path(cfg, split))
    return {p.name: sha256_file(p) for p in paths}


def _download(
    session: requests.Session,
    url: str,
    destination: Path,
    attempts: int,
    backoff: float,
    sleep: Callable[[float], None],
) -> str:
    last_error: Exception | None = None
    for attempt in range(attempts):
        try:
            digest = hashlib.sha256()
            with session.get(url, stream=True, timeout=60) as response:
                response.raise_for_status()
                with destination.open("wb") as f:
                    for chunk in response.iter_content(chunk_size=1 << 20):
                        if chunk:
                            f.write(chunk)
                            digest.update(chunk)
            return digest.hexdigest()
        except requests.RequestException as error:
            last_error = error
            logger.warning("Download attempt %d/%d failed: %s", attempt + 1, attempts, error)
            if attempt + 1 < attempts:
                sleep(backoff * 2**attempt)
    raise DownloadError(f"Could not download {url} after {attempts} attempts: {last_error}")


def _unpack(archive: Path, root: Path) -> None:
    try:
        with zipfile.ZipFile(archive) as zf:
            zf.extractall(root)
        # The UCI archive nests the dataset zip inside an outer zip
        nested = root / f"{DATASET_DIRNAME}.zip"
        if not (root / DATASET_DIRNAME).exists() and nested.is_file():
            with zipfile.ZipFile(nested) as zf:
                zf.extractall(root)
            nested.unlink()
    except zipfile.BadZipFile as error:
        raise DataError(f"Downloaded archive is not a valid zip file: {error}") from error


def fetch_dataset(
    cfg: DatasetConfig,
    session: requests.Session | None = None,
    attempts: int = 3,
    backoff: float = 1.0,
    sleep: Callable[[float], None] = time.sleep,
) -> Path:
    """
    Download, verify and unpack the dataset archive under the configured root. Does
    nothing when a previous fetch already verified the files.

    :param cfg: The dataset configuration.
    :param session: The HTTP session, a new one by default.
    :param attempts: The number of download attempts.
    :param backoff: The delay before the first retry, doubled at every retry.
    :param sleep: The function used to wait between attempts.
    :return: The dataset directory.
    """
    marker = cfg.root / VERIFIED_MARKER
    if marker.is_file() and cfg.dataset_dir.is_dir():
        logger.info("Dataset already present at %s", cfg.dataset_dir)
        return cfg.dataset_dir

    if cfg.download_url is None:
        raise DataError(f"Dataset missing at {cfg.dataset_dir} and no download URL configured")

    cfg.root.mkdir(parents=True, exist_ok=True)
    archive = cfg.root / "download.zip.partial"
    logger.info("Downloading %s", cfg.download_url)
    try:
        digest = _download(
            session or requests.Session(), cfg.download_url, archive, attempts, backoff, sleep
        )
        if cfg.expected_sha256 is None:
            logger.warning("No expected checksum configured, archive SHA-256 is %s", digest)
        elif digest != cfg.expected_sha256.lower():
            raise ChecksumMismatchError(
                f"Checksum mismatch for {cfg.download_url}: "
                f"expected {cfg.expected_sha256}, got {digest}"
            )
        _unpack(archive, cfg.root)
    finally:
        archive.unlink(missing_ok=True)
    marker.write_text(f"{digest}\n")
    logger.info("Dataset unpacked at %s", cfg.dataset_dir)
    return cfg.dataset_dir
