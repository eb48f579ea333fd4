from __future__ import annotations

from pathlib import Path

import pytest

from equihar.config import (
    ALL_KINDS,
    DATA_ROOT_ENV,
    DEFAULT_SEEDS,
    ExperimentConfig,
    build_experiment_config,
    read_config_file,
)
from equihar.dataset import UCI_HAR_URL, AccVariant, DatasetConfig
from equihar.errors import ConfigError
from equihar.features import GroupOnlyReading, RepresentationKind


def test_defaults() -> None:
    cfg = build_experiment_config()
    assert cfg.dataset == DatasetConfig(root=Path("data"))
    assert cfg.dataset.download_url == UCI_HAR_URL
    assert cfg.kinds == ALL_KINDS
    assert cfg.ks == (24,)
    assert cfg.k == 24
    assert cfg.seeds == DEFAULT_SEEDS
    assert cfg.output_dir == Path("results")
    assert cfg.amplitude_log
    assert cfg.ood.rotations_enabled
    assert cfg.group_only_reading is GroupOnlyReading.PER_SENSOR


def test_read_config_file(tmp_path: Path) -> None:
    path = tmp_path / "experiment.cfg"
    path.write_text(
        "# experiment\n"
        "\n"
        "kinds = group_poset, poset_only\n"
        "k = 8,16\n"
        "  seeds=3\n"
        "acc_variant = total\n"
        "expected_sha256 = none\n"
        "rotations_enabled = off\n"
    )
    values = read_config_file(path)
    assert values["kinds"] == "group_poset, poset_only"
    assert values["seeds"] == "3"

    cfg = build_experiment_config(values)
    assert cfg.kinds == (RepresentationKind.GROUP_POSET, RepresentationKind.POSET_ONLY)
    assert cfg.ks == (8, 16)
    assert cfg.k == 8
    assert cfg.seeds == (3,)
    assert cfg.dataset.acc_variant is AccVariant.TOTAL
    assert cfg.dataset.expected_sha256 is None
    assert not cfg.ood.rotations_enabled


def test_read_config_file_errors(tmp_path: Path) -> None:
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "missing.cfg")

    path = tmp_path / "experiment.cfg"
    path.write_text("k = 8\nseeds 3\n")
    with pytest.raises(ConfigError, match=r"experiment\.cfg:2: expected"):
        read_config_file(path)

    path.write_text("# header\nk = 8\nbins = 3\n")
    with pytest.raises(ConfigError, match=r"experiment\.cfg:3: unknown key: bins"):
        read_config_file(path)


def test_precedence() -> None:
    file_values = {"data_root": "from-file", "output_dir": "file-out", "seeds": "1"}
    environ = {DATA_ROOT_ENV: "from-env"}

    cfg = build_experiment_config(file_values)
    assert cfg.dataset.root == Path("from-file")

    cfg = build_experiment_config(file_values, environ=environ)
    assert cfg.dataset.root == Path("from-env")
    assert cfg.output_dir == Path("file-out")

    cfg = build_experiment_config(file_values, {"data_root": "from-flag"}, environ)
    assert cfg.dataset.root == Path("from-flag")
    assert cfg.seeds == (1,)

    cfg = build_experiment_config(file_values, environ={DATA_ROOT_ENV: ""})
    assert cfg.dataset.root == Path("from-file")


@pytest.mark.parametrize(
    "values",
    [
        {"k": "0"},
        {"k": "65"},
        {"k": ""},
        {"seeds": ""},
        {"kinds": "group_poset,fourier"},
        {"amplitude_log": "maybe"},
        {"gain_lo": "1.5", "gain_hi": "1.4"},
        {"shift_halfwidth": "-1"},
        {"group_only_reading": "per_block"},
        {"unknown": "1"},
    ],
)
def test_invalid_values(values: dict[str, str]) -> None:
    with pytest.raises(ConfigError):
        build_experiment_config(values)


def test_experiment_config_validation() -> None:
    dataset = DatasetConfig(root=Path("data"), period=32)
    assert ExperimentConfig(dataset=dataset, ks=(16,)).k == 16
    with pytest.raises(ConfigError):
        ExperimentConfig(dataset=dataset, ks=(24,))
    with pytest.raises(ConfigError):
        ExperimentConfig(dataset=dataset, ks=(8,), kinds=())
