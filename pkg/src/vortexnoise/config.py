"""Experiment configuration: JSON schema, loading and precondition checks."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .fields import ConfigurationError

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT = {"type": "integer"}
_POSINT = {"type": "integer", "minimum": 1}
_POINTS = {"type": "array", "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 3},
           "minItems": 1}

SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "vortexnoise experiment",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "dimension": {"enum": [2, 3]},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "threads": _POSINT,
        "output_dir": {"type": "string"},
        "mollifier": {
            "type": "object", "additionalProperties": False,
            "properties": {"profile_id": {"enum": ["standard_bump"]},
                           "quadrature_points": {"type": "integer", "minimum": 256},
                           "r_max": _POS},
        },
        "law": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "sigma": {"type": "number", "minimum": 0}, "gamma_power": _NUM,
                "length": {"enum": ["point", "power"]}, "ell": _POS, "beta": _NUM,
                "ell_max": _POS, "duration_law": {"enum": ["point", "exponential"]},
                "duration": {"type": "number", "minimum": 0}, "n_steps": _POSINT,
                "moment_p": {"type": "number", "exclusiveMinimum": 2},
            },
        },
        "sample": {
            "type": "object", "additionalProperties": False, "required": ["n_samples", "k_max"],
            "properties": {"n_samples": {"type": "integer", "minimum": 0}, "k_max": _POSINT,
                           "batch_size": _POSINT},
        },
        "jump": {
            "type": "object", "additionalProperties": False,
            "required": ["N", "probes", "out_times"],
            "properties": {"N": _POSINT, "lam": _POS, "T": _POS, "probes": _POINTS,
                           "out_times": {"type": "array", "items": _NUM, "minItems": 1},
                           "n_paths": _POSINT, "k_max": _POSINT,
                           "direction": {"type": "array", "items": _NUM},
                           "gaussianity_paths": {"type": "integer", "minimum": 0},
                           "write_paths": {"type": "boolean"}},
        },
        "spectrum": {
            "type": "object", "additionalProperties": False,
            "properties": {"k_max": _POSINT, "alpha": {"type": "number", "exclusiveMinimum": -1},
                           "C": _POS, "fit_range": {"type": "array", "items": _NUM,
                                                    "minItems": 2, "maxItems": 2},
                           "k0_list": {"type": "array", "items": {"type": "number", "minimum": 2}},
                           "mc_samples": {"type": "integer", "minimum": 0},
                           "mc_k_max": _POSINT},
        },
        "eddy": {
            "type": "object", "additionalProperties": False, "required": ["ell_list"],
            "properties": {"ell_list": {"type": "array", "items": _POS, "minItems": 3},
                           "k_max": _POSINT},
        },
        "transport": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "kappa": {"type": "number", "minimum": 0}, "dt": _POS,
                "steps": {"type": "integer", "minimum": 0},
                "scheme": {"enum": ["ito_corrected_euler", "stratonovich_heun"]},
                "n_grid": _POSINT, "k_max_T": _POSINT, "noise_k_max": _POSINT,
                "out_every": _POSINT, "n_traj": _POSINT, "spectrum_k_max": _POSINT,
                "ell_list": {"type": "array", "items": _POS},
                "initial_modes": {
                    "type": "array", "minItems": 1,
                    "items": {"type": "array", "minItems": 2, "maxItems": 2,
                              "prefixItems": [{"type": "array", "items": _INT},
                                              {"type": "array", "items": _NUM,
                                               "minItems": 2, "maxItems": 2}]},
                },
            },
        },
    },
}

DEFAULTS: dict = {
    "dimension": 2,
    "seed": 0,
    "threads": 1,
    "output_dir": "vortexnoise_out",
    "mollifier": {"profile_id": "standard_bump", "quadrature_points": 1024, "r_max": 512.0},
    "law": {"sigma": 1.0, "gamma_power": 0.0, "length": "point", "ell": 0.1, "beta": 0.0,
            "ell_max": 1.0, "duration_law": "point", "duration": 1.0, "n_steps": 200,
            "moment_p": 3.0},
    "sample": {"batch_size": 512},
    "jump": {"lam": 1.0, "T": 1.0, "n_paths": 1000, "k_max": 8, "gaussianity_paths": 0,
             "write_paths": True},
    "spectrum": {"k_max": 24, "alpha": 1.0, "C": 1.0, "fit_range": [4, 24],
                 "k0_list": [4, 8, 16, 32], "mc_samples": 0, "mc_k_max": 8},
    "eddy": {"k_max": 768},
    "transport": {"kappa": 0.02, "dt": 0.01, "steps": 200, "scheme": "ito_corrected_euler",
                  "n_grid": 64, "noise_k_max": 10, "out_every": 10, "n_traj": 200,
                  "spectrum_k_max": 40, "ell_list": [],
                  "initial_modes": [[[1, 0], [0.5, 0.0]]]},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated configuration with defaults filled in."""

    raw: dict
    data: dict

    @property
    def hash(self) -> str:
        return config_hash(self.data)

    def section(self, name: str) -> dict:
        if name not in self.raw:
            raise ConfigurationError(f"config has no '{name}' section")
        return self.data[name]

    def __getitem__(self, key):
        return self.data[key]


# keys that cannot change numerical results are left out of the hash
_UNHASHED = ("threads", "output_dir")


def config_hash(data: dict) -> str:
    body = {k: v for k, v in data.items() if k not in _UNHASHED}
    canon = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def validate(raw: dict) -> ExperimentConfig:
    """Check ``raw`` against :data:`SCHEMA` and fill defaults."""
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"config invalid at {where}: {exc.message}") from None
    return ExperimentConfig(copy.deepcopy(raw), _merge(DEFAULTS, raw))


def load(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a JSON object")
    if overrides:
        raw = _merge(raw, overrides)
    return validate(raw)
