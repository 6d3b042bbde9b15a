"""Run configuration: JSON schema, loading, validation, hashing.

A run configuration is a single JSON document with four sections:

``system``
    Per-oscillator ``mass``, ``omega``, ``force`` plus ``coupling`` and
    ``hbar``.  Each coefficient is either an expression string (grammar in
    :mod:`oscprop.timefn`) or ``{"csv": "path"}`` for tabulated data.
``interval``
    ``t_start`` and ``t_end`` of the propagation window.
``task``
    Subcommand-specific settings (endpoint grids, initial Gaussian,
    oracle settings, tolerances); see the schema below and the README.
``output``
    Output ``directory`` (created on demand).

Every output file carries the SHA-256 hash of the canonicalized
configuration for provenance.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import jsonschema

from . import timefn
from .system import OscillatorSpec, SystemSpec


class ConfigError(ValueError):
    """The configuration failed schema validation or semantic checks."""


_COEFF = {
    "oneOf": [
        {"type": "string"},
        {
            "type": "object",
            "properties": {"csv": {"type": "string"}},
            "required": ["csv"],
            "additionalProperties": False,
        },
    ]
}

_OSCILLATOR = {
    "type": "object",
    "properties": {"mass": _COEFF, "omega": _COEFF, "force": _COEFF},
    "required": ["mass", "omega"],
    "additionalProperties": False,
}

_AXIS = {
    "type": "object",
    "properties": {
        "min": {"type": "number"},
        "max": {"type": "number"},
        "n": {"type": "integer", "minimum": 1},
    },
    "required": ["min", "max", "n"],
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "system": {
            "type": "object",
            "properties": {
                "oscillator1": _OSCILLATOR,
                "oscillator2": _OSCILLATOR,
                "coupling": _COEFF,
                "hbar": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["oscillator1", "oscillator2"],
            "additionalProperties": False,
        },
        "interval": {
            "type": "object",
            "properties": {"t_start": {"type": "number"}, "t_end": {"type": "number"}},
            "required": ["t_start", "t_end"],
            "additionalProperties": False,
        },
        "task": {
            "type": "object",
            "properties": {
                "tolerance": {"type": "number", "exclusiveMinimum": 0},
                "source": {
                    "type": "array", "items": {"type": "number"},
                    "minItems": 2, "maxItems": 2,
                },
                "grid": {
                    "type": "object",
                    "properties": {"x1": _AXIS, "x2": _AXIS},
                    "required": ["x1", "x2"],
                    "additionalProperties": False,
                },
                "omega0": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0},
                    "minItems": 2, "maxItems": 2,
                },
                "initial": {
                    "type": "object",
                    "properties": {
                        "center": {"type": "array", "items": {"type": "number"},
                                   "minItems": 2, "maxItems": 2},
                        "sigma": {"type": "array",
                                  "items": {"type": "number", "exclusiveMinimum": 0},
                                  "minItems": 2, "maxItems": 2},
                        "momentum": {"type": "array", "items": {"type": "number"},
                                     "minItems": 2, "maxItems": 2},
                    },
                    "required": ["center", "sigma"],
                    "additionalProperties": False,
                },
                "wave_grid": {
                    "type": "object",
                    "properties": {
                        "n": {"type": "integer", "minimum": 4},
                        "extent": {"type": "number", "exclusiveMinimum": 0},
                    },
                    "required": ["n", "extent"],
                    "additionalProperties": False,
                },
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "oracle": {"type": "boolean"},
                "criteria": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 1, "maximum": 10},
                },
            },
            "additionalProperties": False,
        },
        "output": {
            "type": "object",
            "properties": {"directory": {"type": "string"}},
            "additionalProperties": False,
        },
    },
    "required": ["system", "interval"],
    "additionalProperties": False,
}


@dataclass
class RunConfig:
    """Validated configuration plus derived objects."""

    raw: dict
    spec: SystemSpec
    task: dict
    output_dir: str
    config_hash: str


def canonical_hash(raw):
    """SHA-256 of the canonical JSON encoding (sorted keys, tight separators)."""
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _build_coefficient(value, base_dir, what):
    if isinstance(value, str):
        try:
            return timefn.parse(value)
        except timefn.ParseError as err:
            raise ConfigError(f"{what}: {err}") from err
    path = value["csv"]
    if not os.path.isabs(path):
        path = os.path.join(base_dir, path)
    if not os.path.exists(path):
        raise ConfigError(f"{what}: CSV file not found: {path}")
    try:
        return timefn.Tabulated.from_csv(path)
    except ValueError as err:
        raise ConfigError(f"{what}: {err}") from err


def load_config(path, hbar_override=None):
    """Load, schema-validate and semantically validate a configuration file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from err
    return build_config(raw, base_dir=os.path.dirname(os.path.abspath(path)),
                        hbar_override=hbar_override)


def build_config(raw, base_dir=".", hbar_override=None):
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as err:
        loc = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"schema violation at {loc}: {err.message}") from None

    sys_sec = raw["system"]
    oscs = []
    for key in ("oscillator1", "oscillator2"):
        osc = sys_sec[key]
        oscs.append(OscillatorSpec(
            mass=_build_coefficient(osc["mass"], base_dir, f"{key}.mass"),
            omega=_build_coefficient(osc["omega"], base_dir, f"{key}.omega"),
            force=_build_coefficient(osc.get("force", "0"), base_dir, f"{key}.force"),
        ))
    coupling = _build_coefficient(sys_sec.get("coupling", "0"), base_dir, "coupling")
    hbar = float(sys_sec.get("hbar", 1.0))
    if hbar_override is not None:
        hbar = float(hbar_override)
        if hbar <= 0:
            raise ConfigError("hbar override must be positive")

    interval = raw["interval"]
    spec = SystemSpec(
        oscillators=tuple(oscs),
        coupling=coupling,
        hbar=hbar,
        t_start=float(interval["t_start"]),
        t_end=float(interval["t_end"]),
    )
    try:
        spec.validate()
    except ValueError as err:
        raise ConfigError(f"system validation failed: {err}") from err

    out_dir = raw.get("output", {}).get("directory", "oscprop_out")
    return RunConfig(
        raw=raw,
        spec=spec,
        task=dict(raw.get("task", {})),
        output_dir=out_dir,
        config_hash=canonical_hash(raw),
    )
