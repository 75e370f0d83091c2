import json
from pathlib import Path

import pytest

from snse.config import ConfigError, default_config, load_config, parse_config_text

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_defaults_are_the_desk():
    cfg = default_config()
    assert cfg["grid"] == {"dim": 2, "n_per_axis": 16}
    assert cfg["noise"]["amplitude"] == 3.0 and cfg["cascade"]["epsilon1"] == 0.105
    assert cfg.n_paths == 64 and cfg.n_steps == 250 and cfg.norm == "L3"


def test_unknown_key_reports_line():
    text = "grid:\n  dim: 2\n  nn: 3\nbogus:\n  a: 1\n"
    with pytest.raises(ConfigError) as info:
        parse_config_text(text, "c.yaml")
    msg = str(info.value)
    assert "c.yaml:3: grid.nn: unknown key" in msg
    assert "c.yaml:4: bogus: unknown section" in msg


def test_collects_every_error():
    with pytest.raises(ConfigError) as info:
        parse_config_text("grid:\n  dim: 4\ntime:\n  dt: -1\n")
    assert len(info.value.errors) == 2


def test_bool_is_not_an_int():
    with pytest.raises(ConfigError, match="expected int"):
        parse_config_text("grid:\n  dim: true\n")
    assert parse_config_text("dense:\n  enabled: true\n")["dense"]["enabled"] is True


def test_int_promoted_to_float():
    assert parse_config_text("time:\n  T: 1\n")["time"]["T"] == 1.0


def test_T_multiple_of_dt():
    with pytest.raises(ConfigError, match="not a multiple"):
        parse_config_text("time:\n  T: 0.25\n  dt: 0.003\n")


def test_yaml_syntax_error():
    with pytest.raises(ConfigError, match="YAML syntax"):
        parse_config_text("grid: [1,\n", "x.yaml")


def test_file_kind_needs_path():
    with pytest.raises(ConfigError, match="path"):
        parse_config_text("initial_data:\n  kind: file\n")


def test_indices_and_overrides():
    cfg = parse_config_text("ensemble:\n  indices: [3, 5]\n")
    assert cfg.path_indices == [3, 5] and cfg.n_paths == 2
    cfg2 = cfg.with_overrides(ensemble={"indices": None, "n_paths": 4})
    assert cfg2.path_indices == [0, 1, 2, 3]
    with pytest.raises(ConfigError):
        parse_config_text("ensemble:\n  indices: [1, 1]\n")


def test_manifest_is_accepted():
    cfg = default_config()
    text = json.dumps({"manifest_version": 1, "config": cfg.to_dict()})
    assert parse_config_text(text).to_dict() == cfg.to_dict()


@pytest.mark.parametrize("name", ["desk_l3.yaml", "desk_h12.yaml", "desk_l3_3d.yaml"])
def test_shipped_configs_load(name):
    cfg = load_config(CONFIGS / name)
    assert cfg["cascade"]["epsilon1"] == 0.105


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/c.yaml")


def test_grid_too_small():
    with pytest.raises(ConfigError, match="even integer >= 8"):
        parse_config_text("grid:\n  n_per_axis: 6\n")
