import json

import pytest

from app.config import PipelineConfig, config_from_dict, config_to_dict, load_config, validate_config
from app.errors import ConfigError


def test_defaults_follow_the_dataset_preset():
    config = config_from_dict({})
    assert config.epoching.preset == "EDFX"
    assert config.model.n_classes == 7
    assert config.model.input_side == config.render.side == 128
    assert config.train.epochs == 200 and config.train.patience == 15
    assert config.sampler.k_neighbors == 5


def test_file_values_and_overrides_layer_in_order(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({
        "epoching": {"preset": "HMC"},
        "train": {"epochs": 30, "batch_size": 64},
        "layout": {"L": 2.0},
    }), encoding="utf-8")
    config = load_config(path, overrides={"train.epochs": 5, "sampler.seed": 99, "train.lr": None})
    assert config.model.n_classes == 5
    assert config.train.epochs == 5
    assert config.train.lr == 0.001
    assert config.train.batch_size == config.model.batch_size == 64
    assert config.layout.L == 2.0
    assert config.sampler.seed == 99


def test_explicit_class_count_wins():
    config = config_from_dict({"model": {"n_classes": 3}})
    assert config.model.n_classes == 3


def test_custom_preset_lists_become_tuples():
    config = config_from_dict({"epoching": {"preset": "custom", "channel": "EEG Fz",
                                            "class_names": ["sine", "chirp"]}})
    assert config.epoching.class_names == ("sine", "chirp")
    assert config.model.n_classes == 2
    assert config.epoching.preset_definition().channel == "EEG Fz"


def test_snapshot_rebuilds_an_equal_config():
    config = config_from_dict({"model": {"conv_channels": [8, 8, 8, 8]}, "jobs": 2})
    again = config_from_dict(config_to_dict(config))
    assert again == config
    assert isinstance(again, PipelineConfig)


def test_unknown_keys_are_listed_together():
    with pytest.raises(ConfigError) as info:
        config_from_dict({"trian": {}, "model": {"depth": 3}})
    assert "model.depth" in str(info.value) and "trian" in str(info.value)


@pytest.mark.parametrize("data", [
    {"train": {"epochs": 0}},
    {"render": {"side": 64}},
    {"eval_on": "test"},
    {"cv_mode": "loo"},
    {"jobs": 0},
    {"epoching": {"preset": "custom"}},
    {"sampler": {"split_ratio": 1.5}},
    {"layout": {"K": -1}},
    {"model": "big"},
])
def test_invalid_values_raise(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(broken)
    listed = tmp_path / "list.json"
    listed.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(listed)


def test_validate_reports_every_problem():
    config = config_from_dict({})
    config.jobs = 0
    config.eval_on = "nowhere"
    with pytest.raises(ConfigError) as info:
        validate_config(config)
    assert "jobs" in str(info.value) and "eval_on" in str(info.value)
