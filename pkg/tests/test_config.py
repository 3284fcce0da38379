import json

import pytest

from affectstream.config import EngineConfig, config_from_dict, load_config
from affectstream.emotions import ConfigError


def test_defaults_round_trip():
    cfg = EngineConfig()
    assert config_from_dict(json.loads(cfg.to_json())) == cfg


def test_partial_override_keeps_defaults():
    cfg = config_from_dict({"postprocess": {"k": 0.5}, "rule_sets": {"x": [{"conjuncts": ["AU12", "AU15"]}]}})
    assert cfg.postprocess.k == 0.5 and cfg.postprocess.t == 50
    assert [r.state for r in cfg.rule_sets] == ["x"]
    assert cfg.rule_sets[0].rules[0].name == "AU12&AU15"
    assert cfg.emotions == EngineConfig().emotions


@pytest.mark.parametrize("doc,fragment", [
    ({"colour": 1}, "unknown keys"),
    ({"config_version": 2}, "config_version"),
    ({"postprocess": {"smooth_window_frames": 4}}, "odd"),
    ({"postprocess": {"windw": 3}}, "unknown keys"),
    ({"rule_sets": {"x": [{"conjuncts": ["AU12", "AU77"]}]}}, "AU77"),
    ({"rule_sets": {"x": []}}, "empty"),
    ({"emotions": {"joy": {"AU12": 1}}}, "missing"),
    ({"neutral_threshold": 0}, "neutral_threshold"),
    ({"scheduler": {"interval_ms": 0}}, "interval_ms"),
    ({"expressive": {"blink_on": 30, "blink_off": 50}}, "blink"),
])
def test_invalid_configs(doc, fragment):
    with pytest.raises(ConfigError, match=fragment):
        config_from_dict(doc)


def test_load_errors_name_the_file(tmp_path):
    missing = tmp_path / "nope.json"
    with pytest.raises(ConfigError, match="nope.json"):
        load_config(missing)
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    with pytest.raises(ConfigError, match="bad.json"):
        load_config(bad)
    odd = tmp_path / "odd.json"
    odd.write_text(json.dumps({"quality": {"cutoff_fraction": 2}}))
    with pytest.raises(ConfigError, match="odd.json"):
        load_config(odd)


def test_load_valid(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(EngineConfig().to_json())
    assert load_config(p) == EngineConfig()
