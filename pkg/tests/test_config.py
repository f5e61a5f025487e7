import json

import pytest

from sanasim.config import ConfigError, RunConfig, from_dict, load

from conftest import CONFIGS


def test_minimal_config_gets_defaults():
    cfg = from_dict({"seed": 3})
    assert cfg.duration == 2000 and cfg.topology["kind"] == "grid"
    assert cfg.selfmgmt.patrol_interval == 50 and cfg.organs.r == 8


def test_missing_seed_names_key():
    with pytest.raises(ConfigError, match="seed"):
        from_dict({"duration": 10})


def test_unknown_keys_reported_with_path():
    with pytest.raises(ConfigError, match="organs.release"):
        from_dict({"seed": 1, "organs": {"release": 1}})
    with pytest.raises(ConfigError, match="bogus"):
        from_dict({"seed": 1, "bogus": True})


def test_syntax_error_has_line_and_column(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n "seed": 1,\n "duration": ,\n}')
    with pytest.raises(ConfigError, match=r"line 3 column 14"):
        load(p)


@pytest.mark.parametrize("doc,fragment", [
    ({"seed": -1}, "64 bits"),
    ({"seed": True}, "integer"),
    ({"seed": 1, "duration": 0}, "duration"),
    ({"seed": 1, "scenario": {"kind": "Meteor"}}, "kind"),
    ({"seed": 1, "scenario": {"kind": "Worm", "propagation_rate": 2}}, "rates"),
    ({"seed": 1, "organs": {"ttl_min": 10, "ttl_max": 5}}, "ttl"),
    ({"seed": 1, "selfmgmt": {"decay": 1.5}}, "decay"),
    ({"seed": 1, "perturbations": [{"tick": 5}]}, "perturbations"),
])
def test_invalid_values_rejected(doc, fragment):
    with pytest.raises(ConfigError, match=fragment):
        from_dict(doc)


def test_seed_override(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 1}))
    assert load(p, seed=99).seed == 99


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.stem)
def test_shipped_configs_load(path):
    assert isinstance(load(path), RunConfig)


def test_round_trip_through_dict():
    cfg = load(CONFIGS / "worm.json")
    assert from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()
