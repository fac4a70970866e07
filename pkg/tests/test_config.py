import json
from pathlib import Path

import pytest

from tools.data_model import ModelSpec
from tools.synthgen import GeneratorConfig
from utils.config import DEMO_CONFIG_PATH, RUN_CONFIG_DEFAULTS, get_output_dir, load_run_config
from utils.errors import ConfigError


def test_defaults_without_a_file():
    config = load_run_config(None)
    assert config == RUN_CONFIG_DEFAULTS
    assert config is not RUN_CONFIG_DEFAULTS


def test_file_values_and_overrides(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({
        "model": {"k": 3, "z": 2},
        "data": {"test_fraction": 0.3},
        "paths": {"individuals": "data/people.csv", "tasks": "/abs/tasks.csv"},
    }), encoding="utf-8")
    config = load_run_config(path, {"k": 4, "seed": None, "standardize": True})
    assert config["model"] == {"k": 4, "z": 2}
    assert config["data"]["test_fraction"] == 0.3
    assert config["data"]["split_seed"] == 0
    assert config["data"]["standardize"] is True
    assert config["paths"]["individuals"] == str(tmp_path / "data/people.csv")
    assert config["paths"]["tasks"] == "/abs/tasks.csv"


def test_unknown_sections_and_flags(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"optimizer": {}}), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_run_config(path)
    with pytest.raises(ConfigError):
        load_run_config(None, {"learning_rate": 0.1})


def test_missing_or_malformed_file(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "absent.json")
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_run_config(path)


def test_output_dir_per_command(tmp_path):
    config = load_run_config(None, {"output_dir": str(tmp_path)})
    assert get_output_dir(config, "fit") == Path(tmp_path) / "fit"


def test_bundled_demo_config_is_valid():
    config = load_run_config(DEMO_CONFIG_PATH)
    spec = ModelSpec.from_dict(config["model"])
    assert (spec.k, spec.z) == (2, 2)
    assert 0.0 <= config["data"]["test_fraction"] < 1.0
    settings = {k: v for k, v in config["simulate"].items() if k not in ("seed", "model")}
    assert GeneratorConfig.from_dict(settings).n_individuals == 200
