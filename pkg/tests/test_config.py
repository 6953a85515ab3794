import json

import pytest

from rdslab.config import DEFAULTS, experiment_config, family, load_config, noise_path, validate
from rdslab.errors import ConfigError


def test_minimal_config_gets_defaults():
    cfg = validate({"system": {"name": "C"}})
    assert cfg["seed"] == 0 and cfg["transport"]["particles"] == DEFAULTS["transport"]["particles"]
    assert family(cfg).params() == {"a": 0.3}
    assert noise_path(cfg).seed == 11
    assert experiment_config(cfg).depths == (30, 40, 50)


def test_nested_override():
    cfg = validate({"system": {"name": "C", "params": {"a": 0.2}}, "srb": {"depths": [20]},
                    "seed": 4})
    assert family(cfg).params() == {"a": 0.2}
    ec = experiment_config(cfg)
    assert ec.depths == (20,) and ec.seed == 4
    assert cfg["srb"]["r_star"] == DEFAULTS["srb"]["r_star"]


@pytest.mark.parametrize("raw,field", [
    ({}, "system"),
    ({"system": {}}, "system.name"),
    ({"system": {"name": "Q"}}, "system.name"),
    ({"system": {"name": "C"}, "srb": {"depths": []}}, "srb.depths"),
    ({"system": {"name": "C"}, "transport": {"depths": []}}, "transport.depths"),
    ({"system": {"name": "C"}, "transport": {"particles": 0}}, "transport.particles"),
    ({"system": {"name": "C"}, "bogus": 1}, "bogus"),
    ({"system": {"name": "C", "params": {"b": 1}}}, "system.params"),
    ({"system": {"name": "A", "noise": {"kind": "ball", "sigma": 0.9}}}, "system.noise"),
    ({"system": {"name": "C"}, "srb": {"eps_star": 0.03}}, "srb"),
])
def test_schema_errors_name_the_field(raw, field):
    with pytest.raises(ConfigError) as info:
        validate(raw)
    assert info.value.path == field
    assert field in str(info.value)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"system": {"name": "A"}}))
    assert load_config(good)["system"]["name"] == "A"
