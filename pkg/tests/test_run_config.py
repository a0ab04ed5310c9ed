import json

import pytest

from errors import ConfigError
from run_config import RunConfig, build_run_config, load_config_file, resolve_hidden, worker_count


def test_defaults():
    cfg = RunConfig()
    assert cfg.window == 5
    assert cfg.hidden == 75
    assert cfg.samples_per_class == 50
    assert cfg.train.max_sweeps == 200
    assert cfg.seed == 0


def test_hidden_presets():
    assert resolve_hidden("pavia") == 100
    assert resolve_hidden("indian_pines") == 75
    assert resolve_hidden("12") == 12
    with pytest.raises(ConfigError):
        resolve_hidden("huge")


def test_overrides_split_between_run_and_train():
    cfg = RunConfig().with_overrides({"window": 3, "l2": 0.5, "seed": 4, "hidden": "pavia", "cube": None})
    assert cfg.window == 3
    assert cfg.train.l2 == 0.5
    assert cfg.seed == 4
    assert cfg.hidden == 100
    assert cfg.cube is None
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig().with_overrides({"bogus": 1})


def test_file_then_flags(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"window": 7, "seed": 3, "model_type": "rank1_fnn"}))
    cfg = build_run_config(path, {"window": 3, "seed": None})
    assert cfg.window == 3
    assert cfg.seed == 3
    assert cfg.model_type == "rank1_fnn"
    assert cfg.to_dict()["seed"] == 3


def test_bad_config_files(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config_file(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("[1, 2")
    with pytest.raises(ConfigError):
        load_config_file(broken)
    listing = tmp_path / "list.json"
    listing.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config_file(listing)


@pytest.mark.parametrize("changes", [
    {"window": 4},
    {"window": 0},
    {"samples_per_class": 0},
    {"model_type": "svm"},
    {"train_fraction": 1.0},
    {"hidden": 0},
])
def test_validation_errors(changes):
    with pytest.raises(ConfigError):
        RunConfig(**changes).validate(check_paths=False)


def test_missing_paths(planted_files, tmp_path):
    RunConfig(cube=str(planted_files)).validate()
    with pytest.raises(ConfigError, match="not found"):
        RunConfig(cube=str(tmp_path / "absent")).validate()
    with pytest.raises(ConfigError, match="no cube"):
        RunConfig().validate()


def test_worker_count_env(monkeypatch):
    monkeypatch.delenv("HSTC_THREADS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("HSTC_THREADS", "4")
    assert worker_count() == 4
    monkeypatch.setenv("HSTC_THREADS", "lots")
    assert worker_count() == 1
    monkeypatch.setenv("HSTC_THREADS", "0")
    assert worker_count() == 1


def test_string_values_are_coerced():
    cfg = RunConfig().with_overrides({"window": "3", "l2": "0.5", "max_sweeps": 10.0,
                                      "augment_ones": "true", "train_fraction": "0.25"})
    assert cfg.window == 3 and isinstance(cfg.window, int)
    assert cfg.train.l2 == 0.5
    assert cfg.train.max_sweeps == 10 and isinstance(cfg.train.max_sweeps, int)
    assert cfg.train.augment_ones is True
    assert cfg.train_fraction == 0.25
    cfg.validate(check_paths=False)


@pytest.mark.parametrize("key,value", [
    ("window", "wide"),
    ("seed", 1.5),
    ("augment_ones", "maybe"),
    ("l2", [0.1]),
    ("model_type", 3),
    ("hidden", [4]),
    ("hidden", 2.5),
])
def test_bad_values_name_the_key(key, value):
    with pytest.raises(ConfigError, match=key):
        RunConfig().with_overrides({key: value})
