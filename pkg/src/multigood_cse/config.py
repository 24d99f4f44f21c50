"""Strict JSON configuration files for :class:`EconomyConfig`.

Schema (unknown keys are rejected at every level)::

    {
      "n": 2,
      "beta": 0.95,
      "utility": {"kind": "ces", "gamma": 0.5, "alphas": [0.5, 0.5]},
      "endowments": {"support": [[1, 1], [3, 3]], "probs": [0.5, 0.5]},
      "b_bar": 200.0,                      # optional
      "grid": {"n_points": 200, "curvature": 1.7},   # optional
      "types": [                           # optional
        {"weight": 0.5, "utility": {...}, "endowments": {...}}
      ]
    }
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Union

import jsonschema

from .economy import (
    DEFAULT_CURVATURE,
    DEFAULT_GRID_POINTS,
    EconomyConfig,
    EndowmentProcess,
    TypeProfile,
    UtilitySpec,
)

_UTILITY = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "alphas"],
    "properties": {
        "kind": {"enum": ["ces", "cobb_douglas"]},
        "gamma": {"type": "number"},
        "alphas": {"type": "array", "items": {"type": "number"}, "minItems": 1},
    },
}

_ENDOWMENTS = {
    "type": "object",
    "additionalProperties": False,
    "required": ["support", "probs"],
    "properties": {
        "support": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        },
        "probs": {"type": "array", "items": {"type": "number"}, "minItems": 1},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["n", "beta", "utility", "endowments"],
    "properties": {
        "n": {"type": "integer"},
        "beta": {"type": "number"},
        "utility": _UTILITY,
        "endowments": _ENDOWMENTS,
        "b_bar": {"type": "number"},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_points": {"type": "integer"},
                "curvature": {"type": "number"},
            },
        },
        "types": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["weight", "utility", "endowments"],
                "properties": {
                    "weight": {"type": "number"},
                    "utility": _UTILITY,
                    "endowments": _ENDOWMENTS,
                },
            },
        },
    },
}


class ConfigFormatError(ValueError):
    """The configuration document is malformed."""


def _utility(d: dict) -> UtilitySpec:
    if d["kind"] == "ces":
        if "gamma" not in d:
            raise ConfigFormatError("utility.gamma is required for kind 'ces'")
        return UtilitySpec.ces(d["gamma"], d["alphas"])
    if "gamma" in d:
        raise ConfigFormatError("utility.gamma is only allowed for kind 'ces'")
    return UtilitySpec.cobb_douglas(d["alphas"])


def _endowments(d: dict) -> EndowmentProcess:
    widths = {len(row) for row in d["support"]}
    if len(widths) != 1:
        raise ConfigFormatError("endowment support vectors differ in length")
    try:
        return EndowmentProcess(d["support"], d["probs"])
    except ValueError as exc:
        raise ConfigFormatError(str(exc)) from exc


def config_from_dict(doc: dict) -> EconomyConfig:
    """Build a config from a parsed JSON document, rejecting unknown keys."""
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigFormatError(f"{where}: {exc.message}") from exc
    endow = _endowments(doc["endowments"])
    if endow.n_goods != doc["n"]:
        raise ConfigFormatError(
            f"n = {doc['n']} but endowment vectors have {endow.n_goods} goods")
    grid = doc.get("grid", {})
    types = None
    if "types" in doc:
        types = tuple(
            TypeProfile(float(t["weight"]), _utility(t["utility"]), _endowments(t["endowments"]))
            for t in doc["types"]
        )
    return EconomyConfig(
        beta=float(doc["beta"]),
        endowments=endow,
        utility=_utility(doc["utility"]),
        b_bar=float(doc["b_bar"]) if "b_bar" in doc else None,
        grid_points=int(grid.get("n_points", DEFAULT_GRID_POINTS)),
        curvature=float(grid.get("curvature", DEFAULT_CURVATURE)),
        types=types,
    )


def config_to_dict(cfg: EconomyConfig) -> dict:
    out: dict[str, Any] = {
        "n": cfg.n,
        "beta": cfg.beta,
        "utility": cfg.utility.to_dict(),
        "endowments": cfg.endowments.to_dict(),
    }
    if cfg.b_bar is not None:
        out["b_bar"] = cfg.b_bar
    out["grid"] = {"n_points": cfg.grid_points, "curvature": cfg.curvature}
    if cfg.types is not None:
        out["types"] = [
            {"weight": t.weight, "utility": t.utility.to_dict(),
             "endowments": t.endowments.to_dict()}
            for t in cfg.types
        ]
    return out


def load_config(path: Union[str, Path]) -> EconomyConfig:
    """Read and parse a config file; I/O and JSON errors propagate."""
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigFormatError(f"invalid JSON: {exc}") from exc
    return config_from_dict(doc)


def config_hash(path: Union[str, Path]) -> str:
    """SHA-256 of the config file bytes."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
