"""Test loading and validation of experiment configurations."""

import json

import pytest
from stokes_recon.config_loader import (
    DEFAULT_TOLERANCES,
    config_hash,
    get_config,
    list_available_configs,
    load_config,
    validate_config,
)
from stokes_recon.models import Element, ExperimentConfig


def test_list_available_configs():
    """The shipped configurations are discovered."""
    available = list_available_configs()
    assert "default" in available
    assert "quick" in available


def test_get_config_default():
    """The default configuration covers all elements and the full tolerance set."""
    cfg = get_config("default")
    assert cfg.name == "default"
    assert [e.label for e in cfg.element_list] == ["taylor_hood:2", "taylor_hood:3", "taylor_hood:4", "mini:1"]
    assert set(cfg.tolerances) == set(DEFAULT_TOLERANCES)
    assert cfg.reconstruct_flags == [True, False]


def test_get_config_quick_merges_defaults():
    """Fields missing from a file take their defaults."""
    cfg = get_config("quick")
    assert cfg.levels == [4, 8]
    assert cfg.nu == pytest.approx(1e-3)
    assert cfg.tolerances["divergence"] == DEFAULT_TOLERANCES["divergence"]


def test_get_config_invalid_names():
    """Traversal attempts and unknown names are rejected."""
    with pytest.raises(ValueError, match="Invalid config name"):
        get_config("../secrets")
    with pytest.raises(FileNotFoundError, match="Available configs"):
        get_config("nonexistent")


def test_load_config_from_path(tmp_path):
    """Configs can be loaded from any path; the name defaults to the stem."""
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps({"elements": ["th2"], "levels": [2, 4], "tolerances": {"divergence": 1e-9}}))
    cfg = load_config(path)
    assert cfg.name == "tiny"
    assert cfg.element_list == [Element("taylor_hood", 2)]
    assert cfg.tolerances["divergence"] == 1e-9
    assert cfg.tolerances["identity"] == DEFAULT_TOLERANCES["identity"]


def test_load_config_errors(tmp_path):
    """Missing files and malformed JSON are reported."""
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ValueError, match="not valid JSON"):
        load_config(bad)


@pytest.mark.parametrize(
    "data, field",
    [
        ({"elements": []}, "elements"),
        ({"elements": ["taylor_hood:7"]}, "elements"),
        ({"elements": ["p2p1"]}, "elements"),
        ({"levels": [4, 0]}, "levels"),
        ({"levels": [4, 8.5]}, "levels"),
        ({"ns_orders": [5]}, "ns_orders"),
        ({"nu": 0.0}, "nu"),
        ({"nus": [1.0, -1.0]}, "nus"),
        ({"reconstruct": "sometimes"}, "reconstruct"),
        ({"perturb": 0.3}, "perturb"),
        ({"quad_extra": 25}, "quad_extra"),
        ({"picard_max_iter": 0}, "picard_max_iter"),
        ({"tolerances": {"speed": 1.0}}, "tolerances"),
    ],
)
def test_validate_config_names_the_field(data, field):
    """Each invalid field is named in the error message."""
    with pytest.raises(ValueError, match=f"'{field}'"):
        validate_config(data)


def test_validate_config_rejects_unknown_fields():
    """Typos in field names are not silently ignored."""
    with pytest.raises(ValueError, match="Unknown config fields"):
        validate_config({"level": [4]})
    with pytest.raises(ValueError):
        validate_config(["levels"])


def test_element_parsing():
    """Element specifications accept aliases and reject bad orders."""
    assert Element.parse("taylor_hood:3") == Element("taylor_hood", 3)
    assert Element.parse("TH4") == Element("taylor_hood", 4)
    assert Element.parse("mini") == Element("mini", 1)
    with pytest.raises(ValueError):
        Element.parse("taylor_hood")
    with pytest.raises(ValueError):
        Element("mini", 2)


def test_element_orders():
    """Derived orders of the reconstruction spaces."""
    th3 = Element("taylor_hood", 3)
    assert (th3.pressure_order, th3.flux_order, th3.koszul_order, th3.oscillation_order) == (2, 2, 3, 1)
    mini = Element("mini", 1)
    assert (mini.pressure_order, mini.flux_order, mini.koszul_order, mini.oscillation_order) == (1, 2, 2, 0)


def test_config_hash_is_stable():
    """Equal configurations hash equally; any change alters the hash."""
    a = validate_config({"levels": [4, 8]})
    b = validate_config({"levels": [4, 8]})
    assert config_hash(a) == config_hash(b)
    assert len(config_hash(a)) == 64
    b.seed = 1
    assert config_hash(a) != config_hash(b)
    assert isinstance(a, ExperimentConfig)
