"""Loader for named experiment configurations (``configs/<name>.json``)."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, fields
from pathlib import Path
from typing import Any, Dict, List, Union

from .models import Element, ExperimentConfig

logger = logging.getLogger(__name__)

__all__ = [
    "DEFAULT_TOLERANCES",
    "get_config",
    "load_config",
    "list_available_configs",
    "validate_config",
    "config_hash",
    "configs_dir",
]

DEFAULT_TOLERANCES: Dict[str, float] = {
    "identity": 1e-11,
    "divergence": 1e-10,
    "nu_invariance": 1e-6,
    "no_flow": 1e-9,
    "eoc_velocity": 0.15,
    "eoc_pressure": 0.25,
    "eoc_velocity_mini": 0.2,
    "eoc_pressure_mini": 0.3,
    "navier_stokes": 1e-8,
    "oscillation_rate": 0.3,
}

_INT_LISTS = ("levels", "sweep_levels", "ns_levels", "ns_orders", "verify_levels")


def configs_dir() -> Path:
    return Path(__file__).parent.parent / "configs"


def list_available_configs() -> List[str]:
    """
    List all named configurations.

    Returns:
        Sorted list of config names (file stems)
    """
    directory = configs_dir()
    if not directory.exists():
        return []
    return sorted(f.stem for f in directory.glob("*.json") if f.is_file())


def _require(cond: bool, field_name: str, message: str) -> None:
    if not cond:
        raise ValueError(f"Invalid config field '{field_name}': {message}")


def validate_config(data: Dict[str, Any]) -> ExperimentConfig:
    """
    Build an :class:`ExperimentConfig` from a plain mapping.

    Args:
        data: Parsed JSON document; missing fields take their defaults

    Returns:
        Validated configuration

    Raises:
        ValueError: Naming the first offending field
    """
    if not isinstance(data, dict):
        raise ValueError(f"config must be a JSON object, got {type(data).__name__}")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"Unknown config fields {unknown}. Available fields: {sorted(known)}")

    cfg = ExperimentConfig(**data)

    _require(isinstance(cfg.elements, list) and cfg.elements, "elements", "expected a non-empty list")
    for text in cfg.elements:
        try:
            Element.parse(str(text))
        except ValueError as exc:
            raise ValueError(f"Invalid config field 'elements': {exc}") from None

    for name in _INT_LISTS:
        values = getattr(cfg, name)
        _require(isinstance(values, list) and values, name, "expected a non-empty list of integers")
        _require(all(isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in values), name,
                 f"expected positive integers, got {values}")
    _require(all(k in (2, 3, 4) for k in cfg.ns_orders), "ns_orders", "Taylor-Hood orders must lie in {2, 3, 4}")

    for name in ("nu", "ns_nu", "picard_tol"):
        value = getattr(cfg, name)
        _require(isinstance(value, (int, float)) and value > 0, name, f"expected a positive number, got {value!r}")
    _require(isinstance(cfg.nus, list) and cfg.nus and all(isinstance(v, (int, float)) and v > 0 for v in cfg.nus),
             "nus", "expected a non-empty list of positive numbers")

    _require(cfg.reconstruct in ("on", "off", "both"), "reconstruct",
             f"expected one of ['on', 'off', 'both'], got {cfg.reconstruct!r}")
    _require(isinstance(cfg.seed, int), "seed", "expected an integer")
    _require(isinstance(cfg.perturb, (int, float)) and 0 <= cfg.perturb < 0.3, "perturb", "expected 0 <= perturb < 0.3")
    for name in ("random_samples", "picard_max_iter"):
        value = getattr(cfg, name)
        _require(isinstance(value, int) and value >= 1, name, f"expected a positive integer, got {value!r}")
    _require(isinstance(cfg.quad_extra, int) and 0 <= cfg.quad_extra <= 20, "quad_extra", "expected 0..20")

    _require(isinstance(cfg.tolerances, dict), "tolerances", "expected a mapping")
    bad = sorted(set(cfg.tolerances) - set(DEFAULT_TOLERANCES))
    _require(not bad, "tolerances", f"unknown checks {bad}. Available: {sorted(DEFAULT_TOLERANCES)}")
    cfg.tolerances = {**DEFAULT_TOLERANCES, **{k: float(v) for k, v in cfg.tolerances.items()}}
    cfg.nu = float(cfg.nu)
    cfg.ns_nu = float(cfg.ns_nu)
    cfg.nus = [float(v) for v in cfg.nus]
    return cfg


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file '{path}' not found. Available configs: {list_available_configs()}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ValueError(f"Config file '{path}' is not valid JSON: {exc}") from exc
    cfg = validate_config(data)
    if cfg.name is None:
        cfg.name = path.stem
    logger.debug("Loaded config %s from %s", cfg.name, path)
    return cfg


def get_config(name: str = "default") -> ExperimentConfig:
    """
    Load a named configuration from ``configs/``.

    Raises:
        FileNotFoundError: If the config file doesn't exist
        ValueError: If the name is invalid or the content fails validation
    """
    # Validate name (prevents path traversal)
    if not name.replace("_", "").replace("-", "").isalnum():
        raise ValueError(f"Invalid config name: {name}")
    path = configs_dir() / f"{name}.json"
    if not path.exists():
        raise FileNotFoundError(f"Config '{name}' not found. Available configs: {list_available_configs()}")
    return load_config(path)


def config_hash(cfg: ExperimentConfig) -> str:
    """sha256 of the canonical JSON form (sorted keys, no whitespace)."""
    payload = json.dumps(asdict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
