"""Run configuration: JSON schema, defaults and conversion to library objects.

A config file is a single JSON object.  Missing optional blocks and fields
are filled from ``DEFAULTS`` before validation, and the completed config is
echoed into every run manifest so runs are self-describing.
"""
from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .errors import ConfigError
from .noise import LAWS, NoiseLaw, NoisePath
from .srb import ExperimentConfig
from .systems import get_system, system_names

_POINT = {"type": "array", "items": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
          "minItems": 2, "maxItems": 2}
_POS_INT = {"type": "integer", "minimum": 1}
_DEPTHS = {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1,
           "uniqueItems": True}
_NUM_OR_NULL = {"type": ["number", "null"]}


def _block(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


SCHEMA = _block({
    "system": _block({
        "name": {"type": "string", "enum": system_names()},
        "params": {"type": "object", "additionalProperties": {"type": "number"}},
        "noise": _block({
            "kind": {"type": "string", "enum": list(LAWS)},
            "sigma": {"type": "number", "minimum": 0},
            "seed": {"type": "integer", "minimum": 0},
        }),
    }, required=("name",)),
    "seed": {"type": "integer", "minimum": 0},
    "workers": _POS_INT,
    "chart": _block({
        "lambda0": _NUM_OR_NULL,
        "lambda0_steps": _POS_INT,
        "delta0": _NUM_OR_NULL,
        "delta1": {"type": "number", "exclusiveMinimum": 0},
        "delta2": _NUM_OR_NULL,
        "horizon": _POS_INT,
        "K0_bar": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.1},
        "r1_bar": _NUM_OR_NULL,
        "temper_window": _POS_INT,
    }),
    "stationary": _block({
        "grid": {"type": "integer", "minimum": 16},
        "noise_samples": {"type": "integer", "minimum": 1000},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "max_iter": _POS_INT,
    }),
    "lyapunov": _block({
        "steps": _POS_INT,
        "transient": {"type": "integer", "minimum": 0},
        "point": _POINT,
    }),
    "transport": _block({
        "particles": _POS_INT,
        "depths": _DEPTHS,
        "grid": {"type": "integer", "minimum": 2},
        "initial": {"type": "string", "enum": ["stationary", "uniform"]},
        "save_ensembles": {"type": "boolean"},
    }),
    "unstable": _block({
        "points": {"type": "array", "items": _POINT, "minItems": 1},
        "n_past": _POS_INT,
        "radius": _NUM_OR_NULL,
        "frames": {"type": "string", "enum": ["lyapunov", "euclidean"]},
    }),
    "entropy": _block({
        "steps": {"type": "integer", "minimum": 1000},
        "point": _POINT,
        "n_dir": _POS_INT,
        "transient": {"type": "integer", "minimum": 0},
    }),
    "srb": _block({
        "beta0": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "l0": _NUM_OR_NULL,
        "eps_star": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
        "r_star": {"type": "number", "exclusiveMinimum": 0},
        "c_frak": {"type": "number", "exclusiveMinimum": 1},
        "depths": {"type": "array", "items": _POS_INT, "minItems": 1, "uniqueItems": True},
        "alpha0": _NUM_OR_NULL,
        "particles": _POS_INT,
        "selection_particles": _POS_INT,
        "n_lines": _POS_INT,
        "stack_leaves": {"type": "integer", "minimum": 2},
        "leaf_radius": _NUM_OR_NULL,
        "u_past": _POS_INT,
        "partition_levels": _POS_INT,
        "density_levels": {"type": "array", "items": _POS_INT, "minItems": 1},
        "cube_levels": {"type": "integer", "minimum": 0},
        "band_level": _POS_INT,
        "min_cell_count": _POS_INT,
        "n_dir": _POS_INT,
        "min_retained": _POS_INT,
    }),
    "plot": _block({
        "max_points": _POS_INT,
    }),
}, required=("system",))

DEFAULTS = {
    "system": {"params": {}, "noise": {"kind": "uniform_full", "sigma": 0.0, "seed": 11}},
    "seed": 0,
    "workers": 1,
    "chart": {"lambda0": None, "lambda0_steps": 20000, "delta0": None, "delta1": 0.1,
              "delta2": None, "horizon": 30, "K0_bar": 0.1, "r1_bar": None, "temper_window": 20},
    "stationary": {"grid": 64, "noise_samples": 20000, "tol": 1e-10, "max_iter": 5000},
    "lyapunov": {"steps": 10000, "transient": 100, "point": [0.1234, 0.5678]},
    "transport": {"particles": 1_000_000, "depths": [0, 10, 20, 30, 40, 50, 60], "grid": 64,
                  "initial": "stationary", "save_ensembles": False},
    "unstable": {"points": [[0.3, 0.7]], "n_past": 40, "radius": None, "frames": "lyapunov"},
    "entropy": {"steps": 100_000, "point": [0.1234, 0.5678], "n_dir": 40, "transient": 100},
    "srb": {k: v for k, v in ExperimentConfig().to_dict().items()
            if k not in ("alpha0_resolved", "leaf_radius_resolved", "seed")},
    "plot": {"max_points": 20000},
}


def _merge(defaults, given):
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _error_path(err) -> str:
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        # the message starts with the quoted missing property
        missing = err.message.split("'")[1] if "'" in err.message else ""
        parts.append(missing)
    elif err.validator == "additionalProperties" and "'" in err.message:
        parts.append(err.message.split("'")[1])
    return ".".join(parts)


def validate(raw: dict) -> dict:
    """Fill defaults and validate; raises ``ConfigError`` naming the first bad field."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    # validate the raw object first so missing required fields are reported as such
    errors = sorted(jsonschema.Draft7Validator(SCHEMA).iter_errors(raw),
                    key=lambda e: (list(map(str, e.absolute_path)), e.validator))
    if errors:
        e = errors[0]
        raise ConfigError(e.message, _error_path(e))
    cfg = _merge(DEFAULTS, raw)
    errors = sorted(jsonschema.Draft7Validator(SCHEMA).iter_errors(cfg),
                    key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        raise ConfigError(errors[0].message, _error_path(errors[0]))
    # semantic checks that the schema cannot express
    try:
        get_system(cfg["system"]["name"], **cfg["system"]["params"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "system.params") from None
    try:
        noise_law(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc), "system.noise") from None
    try:
        experiment_config(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "srb") from None
    return cfg


def load_config(path) -> dict:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return validate(raw)


def noise_law(cfg) -> NoiseLaw:
    n = cfg["system"]["noise"]
    return NoiseLaw(n["kind"], float(n["sigma"]))


def noise_path(cfg) -> NoisePath:
    return NoisePath(int(cfg["system"]["noise"]["seed"]), noise_law(cfg))


def family(cfg):
    return get_system(cfg["system"]["name"], **cfg["system"]["params"])


def experiment_config(cfg) -> ExperimentConfig:
    s = dict(cfg["srb"])
    s["depths"] = tuple(s["depths"])
    s["density_levels"] = tuple(s["density_levels"])
    s["seed"] = int(cfg["seed"])
    return ExperimentConfig(**s)
