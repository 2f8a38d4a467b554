"""Experiment configuration from flat KEY=VALUE files.

Keys are grouped by prefix: VEHICLE_, NET_, CBF_, FILTER_, SCENARIO_ and
OUTPUT_. Each typed setting maps to the upper-cased field name of its
dataclass, e.g. VEHICLE_WHEELBASE or SCENARIO_Y_NOM. Anything missing takes
the dataclass default, and scenario runs start from the tuning of their kind
and margin mode.
"""

import os
import logging
from dataclasses import fields, replace
from enum import Enum
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
from dotenv import dotenv_values

from .errors import ConfigError
from .hocbf import CbfConfig, MarginMode
from .margin_net import InputRange, TrainingConfig
from .safety_filter import FilterConfig
from .scenarios import ScenarioConfig, ScenarioKind, bypassing_config, overtaking_config
from .vehicle_dynamics import VehicleParams

logger = logging.getLogger(__name__)

PREFIXES = ("VEHICLE_", "NET_", "CBF_", "FILTER_", "SCENARIO_", "OUTPUT_")
AUTO = "auto"

NET_EXTRAS = {"NET_RANGE_MULTIPLE": "3", "NET_EVAL_COUNT": "100000", "NET_EVAL_SEED": "1"}
CBF_EXTRAS = {"CBF_EPSILON_SAMPLES": "100000"}
FILTER_KEYS = {"FILTER_SLACK_PENALTY", "FILTER_MAX_ITERATIONS", "FILTER_WEIGHTS", "FILTER_SCOPE", "FILTER_ENABLED"}
SCENARIO_NESTED = {"cbf", "vehicle", "filter_config", "filter_scope", "filter_enabled"}
OUTPUT_DEFAULTS = {"OUTPUT_DIR": "out"}


def _field_keys(prefix: str, cls, exclude: Iterable[str] = ()) -> Dict[str, str]:
    return {prefix + f.name.upper(): f.name for f in fields(cls) if f.name not in exclude}


VEHICLE_KEYS = _field_keys("VEHICLE_", VehicleParams)
NET_KEYS = _field_keys("NET_", TrainingConfig)
CBF_KEYS = _field_keys("CBF_", CbfConfig)
SCENARIO_KEYS = _field_keys("SCENARIO_", ScenarioConfig, exclude=SCENARIO_NESTED)

KNOWN_KEYS = (
    set(VEHICLE_KEYS) | set(NET_KEYS) | set(NET_EXTRAS) | set(CBF_KEYS) | set(CBF_EXTRAS)
    | FILTER_KEYS | set(SCENARIO_KEYS) | set(OUTPUT_DEFAULTS)
)


def load_config(path: Optional[str] = None) -> Dict[str, str]:
    """Read a config file; no path means all defaults"""
    if path is None:
        return {}
    if not os.path.isfile(path):
        raise ConfigError("--config", f"file not found: {path}")
    values = dict(dotenv_values(path))
    for key, value in values.items():
        if value is None:
            raise ConfigError(key, "has no value")
        if key.startswith(PREFIXES) and key not in KNOWN_KEYS:
            raise ConfigError(key, "unknown setting")
        if not key.startswith(PREFIXES):
            logger.debug(f"Ignoring key {key} from {path}")
    logger.info(f"Loaded {len(values)} settings from {path}")
    return values


def _parse_bool(key: str, raw: str) -> bool:
    text = raw.strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(key, f"expected a boolean, got {raw!r}")


def _parse(key: str, raw: str, current):
    """Convert raw text to the type of the current (default) value"""
    try:
        if isinstance(current, bool):
            return _parse_bool(key, raw)
        if isinstance(current, Enum):
            return type(current)(raw.strip().lower())
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, tuple):
            return tuple(int(part) for part in raw.split(",") if part.strip())
        return float(raw)
    except ValueError as e:
        raise ConfigError(key, f"cannot parse {raw!r}: {e}")


def _apply(values: Dict[str, str], keys: Dict[str, str], base, skip: Iterable[str] = ()):
    overrides = {
        name: _parse(key, values[key], getattr(base, name))
        for key, name in keys.items()
        if key in values and key not in skip
    }
    if not overrides:
        return base
    try:
        return replace(base, **overrides)
    except ValueError as e:
        raise ConfigError(", ".join(sorted(k for k, n in keys.items() if n in overrides)), str(e))


def vehicle_params_from(values: Dict[str, str]) -> VehicleParams:
    return _apply(values, VEHICLE_KEYS, VehicleParams())


def training_config_from(values: Dict[str, str], seed: Optional[int] = None) -> TrainingConfig:
    config = _apply(values, NET_KEYS, TrainingConfig())
    return config if seed is None else replace(config, seed=seed)


def input_range_from(values: Dict[str, str], params: VehicleParams) -> InputRange:
    multiple = _parse("NET_RANGE_MULTIPLE", values.get("NET_RANGE_MULTIPLE", NET_EXTRAS["NET_RANGE_MULTIPLE"]), 0.0)
    if multiple <= 0:
        raise ConfigError("NET_RANGE_MULTIPLE", "must be positive")
    return InputRange.for_vehicle(params, multiple)


def eval_settings_from(values: Dict[str, str]) -> Tuple[int, int]:
    """(sample count, seed) for error-bound estimation"""
    count = _parse("NET_EVAL_COUNT", values.get("NET_EVAL_COUNT", NET_EXTRAS["NET_EVAL_COUNT"]), 0)
    seed = _parse("NET_EVAL_SEED", values.get("NET_EVAL_SEED", NET_EXTRAS["NET_EVAL_SEED"]), 0)
    if count <= 0:
        raise ConfigError("NET_EVAL_COUNT", "must be positive")
    return count, seed


def epsilon_is_auto(values: Dict[str, str]) -> bool:
    return values.get("CBF_EPSILON", "").strip().lower() == AUTO


def epsilon_samples_from(values: Dict[str, str]) -> int:
    count = _parse("CBF_EPSILON_SAMPLES", values.get("CBF_EPSILON_SAMPLES", CBF_EXTRAS["CBF_EPSILON_SAMPLES"]), 0)
    if count <= 0:
        raise ConfigError("CBF_EPSILON_SAMPLES", "must be positive")
    return count


def cbf_config_from(values: Dict[str, str], base: Optional[CbfConfig] = None) -> CbfConfig:
    """CBF_EPSILON=auto leaves epsilon at the base value; the caller estimates it from the model"""
    skip = {"CBF_EPSILON"} if epsilon_is_auto(values) else set()
    base = base or CbfConfig()
    for key in ("CBF_K_ALPHA1", "CBF_K_ALPHA2"):
        if key in values and values[key].strip() == "":
            skip.add(key)
    return _apply(values, CBF_KEYS, base, skip=skip)


def filter_config_from(values: Dict[str, str]) -> FilterConfig:
    config = _apply(
        values,
        {"FILTER_SLACK_PENALTY": "slack_penalty", "FILTER_MAX_ITERATIONS": "max_iterations"},
        FilterConfig(),
    )
    if "FILTER_WEIGHTS" in values:
        try:
            diagonal = [float(part) for part in values["FILTER_WEIGHTS"].split(",")]
        except ValueError as e:
            raise ConfigError("FILTER_WEIGHTS", f"cannot parse {values['FILTER_WEIGHTS']!r}: {e}")
        if len(diagonal) != 4 or min(diagonal) <= 0:
            raise ConfigError("FILTER_WEIGHTS", "expected four positive numbers")
        config = replace(config, weight_matrix=np.diag(diagonal))
    return config


def scenario_config_from(values: Dict[str, str], seed: Optional[int] = None, filter_enabled: Optional[bool] = None) -> ScenarioConfig:
    """Scenario tuned for its kind and margin mode, then overridden key by key"""
    kind = _parse("SCENARIO_KIND", values.get("SCENARIO_KIND", "overtaking"), ScenarioKind.OVERTAKING)
    mode = _parse("CBF_MARGIN_MODE", values.get("CBF_MARGIN_MODE", "hybrid"), MarginMode.HYBRID)
    base = overtaking_config(mode) if kind == ScenarioKind.OVERTAKING else bypassing_config(mode)

    scenario_keys = {**SCENARIO_KEYS, "FILTER_SCOPE": "filter_scope", "FILTER_ENABLED": "filter_enabled"}
    config = _apply(values, scenario_keys, base)
    config = replace(
        config,
        cbf=cbf_config_from(values, base.cbf),
        vehicle=vehicle_params_from(values),
        filter_config=filter_config_from(values),
    )
    if seed is not None:
        config = replace(config, seed=seed)
    if filter_enabled is not None:
        config = replace(config, filter_enabled=filter_enabled)
    return config


def output_dir_from(values: Dict[str, str]) -> str:
    return values.get("OUTPUT_DIR", OUTPUT_DEFAULTS["OUTPUT_DIR"])


def _format(value) -> str:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if value is None:
        return ""
    return repr(value) if isinstance(value, float) else str(value)


def _section(keys: Dict[str, str], obj) -> Dict[str, str]:
    return {key: _format(getattr(obj, name)) for key, name in keys.items()}


def resolved_config(values: Dict[str, str]) -> Dict[str, str]:
    """Every known setting with its effective value, for the run manifest"""
    scenario = scenario_config_from(values)
    resolved = {}
    resolved.update(_section(VEHICLE_KEYS, scenario.vehicle))
    resolved.update(_section(NET_KEYS, training_config_from(values)))
    resolved.update({key: values.get(key, default) for key, default in NET_EXTRAS.items()})
    resolved.update(_section(CBF_KEYS, scenario.cbf))
    resolved.update({key: values.get(key, default) for key, default in CBF_EXTRAS.items()})
    if epsilon_is_auto(values):
        resolved["CBF_EPSILON"] = AUTO
    resolved["FILTER_SLACK_PENALTY"] = _format(scenario.filter_config.slack_penalty)
    resolved["FILTER_MAX_ITERATIONS"] = _format(scenario.filter_config.max_iterations)
    resolved["FILTER_WEIGHTS"] = ",".join(repr(float(w)) for w in np.diag(scenario.filter_config.weight_matrix))
    resolved["FILTER_SCOPE"] = scenario.filter_scope.value
    resolved["FILTER_ENABLED"] = _format(scenario.filter_enabled)
    resolved.update(_section(SCENARIO_KEYS, scenario))
    resolved["OUTPUT_DIR"] = output_dir_from(values)
    return resolved
