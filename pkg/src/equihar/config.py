"""
Experiment configuration: a plain-text ``key = value`` file, environment overrides
and command-line overrides, merged into an `ExperimentConfig`.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping
from pathlib import Path
from typing import Any

from equihar.codec import Record, record
from equihar.dataset import UCI_HAR_URL, AccVariant, DatasetConfig
from equihar.errors import ConfigError
from equihar.features import DEFAULT_BINS, GroupOnlyReading, RepresentationKind
from equihar.perturb import OodConfig
from equihar.signal import DEFAULT_PERIOD

DATA_ROOT_ENV = "EQUIHAR_DATA_ROOT"
"""
Environment variable overriding the dataset root.
"""

ALL_KINDS: tuple[RepresentationKind, ...] = tuple(RepresentationKind)
DEFAULT_SEEDS: tuple[int, ...] = (0, 1, 2, 3, 4)


@record
class ExperimentConfig(Record):
    dataset: DatasetConfig
    kinds: tuple[RepresentationKind, ...] = ALL_KINDS
    ks: tuple[int, ...] = (DEFAULT_BINS,)
    """
    Numbers of retained bins, one benchmark table each.
    """

    seeds: tuple[int, ...] = DEFAULT_SEEDS
    """
    Seeds of the OOD test realizations, training is never perturbed.
    """

    output_dir: Path = Path("results")
    amplitude_log: bool = True
    ood: OodConfig = OodConfig()
    group_only_reading: GroupOnlyReading = GroupOnlyReading.PER_SENSOR

    def __post_init__(self) -> None:
        if not self.kinds:
            raise ConfigError("At least one representation kind is required")
        if not self.ks:
            raise ConfigError("At least one number of bins is required")
        period = self.dataset.period
        for k in self.ks:
            if not 1 <= k <= period // 2:
                raise ConfigError(f"Number of bins must be within [1, {period // 2}]: {k}")
        if not self.seeds:
            raise ConfigError("At least one seed is required")

    @property
    def k(self) -> int:
        return self.ks[0]


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_optional(text: str) -> str | None:
    text = text.strip()
    return None if text.lower() in ("", "none") else text


def _parse_list(item: Callable[[str], Any]) -> Callable[[str], tuple[Any, ...]]:
    def parse(text: str) -> tuple[Any, ...]:
        return tuple(item(part.strip()) for part in text.split(",") if part.strip())

    return parse


CONFIG_KEYS: dict[str, Callable[[str], Any]] = {
    "data_root": Path,
    "acc_variant": AccVariant,
    "download_url": _parse_optional,
    "expected_sha256": _parse_optional,
    "kinds": _parse_list(RepresentationKind),
    "k": _parse_list(int),
    "seeds": _parse_list(int),
    "output_dir": Path,
    "amplitude_log": _parse_bool,
    "shift_halfwidth": int,
    "gain_lo": float,
    "gain_hi": float,
    "rotations_enabled": _parse_bool,
    "ood_seed": int,
    "period": int,
    "group_only_reading": GroupOnlyReading,
}
"""
The recognized keys, with the parser of their values.
"""


def read_config_file(path: Path) -> dict[str, str]:
    """
    Read a configuration file of ``key = value`` lines. Blank lines and lines
    starting with ``#`` are ignored.

    :param path: The file.
    :return: The raw values, indexed by key.
    """
    if not path.is_file():
        raise ConfigError(f"Missing configuration file: {path}")
    values: dict[str, str] = {}
    for number, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, separator, value = stripped.partition("=")
        key = key.strip()
        if not separator or not key:
            raise ConfigError(f"{path}:{number}: expected 'key = value', got: {stripped!r}")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{number}: unknown key: {key}")
        values[key] = value.strip()
    return values


def _parse_values(values: Mapping[str, str]) -> dict[str, Any]:
    parsed = {}
    for key, text in values.items():
        if (parse := CONFIG_KEYS.get(key)) is None:
            raise ConfigError(f"Unknown configuration key: {key}")
        try:
            parsed[key] = parse(text)
        except ValueError as error:
            raise ConfigError(f"Invalid value for {key}: {text!r} ({error})") from None
    return parsed


def build_experiment_config(
    file_values: Mapping[str, str] | None = None,
    overrides: Mapping[str, str] | None = None,
    environ: Mapping[str, str] | None = None,
) -> ExperimentConfig:
    """
    Merge configuration sources, from lowest to highest precedence: defaults, the
    configuration file, the environment and command-line flags.

    :param file_values: Raw values read from a configuration file.
    :param overrides: Raw values given as command-line flags.
    :param environ: The environment, only `DATA_ROOT_ENV` is read.
    :return: The validated configuration.
    """
    merged = dict(file_values or {})
    if environ is not None and (data_root := environ.get(DATA_ROOT_ENV)):
        merged["data_root"] = data_root
    merged |= overrides or {}
    values = _parse_values(merged)

    try:
        dataset = DatasetConfig(
            root=values.get("data_root", Path("data")),
            acc_variant=values.get("acc_variant", AccVariant.BODY),
            download_url=values.get("download_url", UCI_HAR_URL),
            expected_sha256=values.get("expected_sha256"),
            period=values.get("period", DEFAULT_PERIOD),
        )
        defaults = OodConfig()
        ood = OodConfig(
            shift_halfwidth=values.get("shift_halfwidth", defaults.shift_halfwidth),
            gain_lo=values.get("gain_lo", defaults.gain_lo),
            gain_hi=values.get("gain_hi", defaults.gain_hi),
            rotations_enabled=values.get("rotations_enabled", defaults.rotations_enabled),
            seed=values.get("ood_seed", defaults.seed),
        )
        return ExperimentConfig(
            dataset=dataset,
            kinds=values.get("kinds", ALL_KINDS),
            ks=values.get("k", (DEFAULT_BINS,)),
            seeds=values.get("seeds", DEFAULT_SEEDS),
            output_dir=values.get("output_dir", Path("results")),
            amplitude_log=values.get("amplitude_log", True),
            ood=ood,
            group_only_reading=values.get("group_only_reading", GroupOnlyReading.PER_SENSOR),
        )
    except ConfigError:
        raise
    except ValueError as error:
        raise ConfigError(str(error)) from None
