"""Experiment configuration: JSON schema, defaults and resolution.

A config is one JSON object.  Unknown keys are rejected; every omitted key is
filled from the defaults so that the resolved config written beside the
outputs fully determines the run.
"""
from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path

import jsonschema

from .errors import ConfigError
from .sampler import SamplerConfig

KINDS = ("sample", "estimate-g", "max-scaling", "high-points", "tail", "bl-check", "mgf", "increments",
         "coupling", "clt", "truncated-count", "tiles", "report", "acceptance")

_site = {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2}
_site_or_null = {"anyOf": [_site, {"type": "null"}]}
_num = {"type": "number"}
_num_or_null = {"type": ["number", "null"]}
_grid = {"anyOf": [{"type": "array", "items": _num}, {"type": "null"}]}

_sampler_props = {
    "sweeps_burnin": {"type": ["integer", "null"], "minimum": 0},
    "sweeps_between_samples": {"type": "integer", "minimum": 1},
    "n_samples": {"type": "integer", "minimum": 1},
    "proposal_std": {"type": "number", "exclusiveMinimum": 0},
    "kernel": {"enum": ["metropolis", "heatbath"]},
    "diagnostics": {"type": "boolean"},
    "n_chains": {"type": "integer", "minimum": 1},
    "hmc_moves": {"type": "integer", "minimum": 0},
    "hmc_steps": {"type": ["integer", "null"], "minimum": 1},
    "adapt": {"type": "boolean"},
    "target_acceptance": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "experiment": {"enum": list(KINDS)},
        "N": {"type": ["integer", "null"], "minimum": 1},
        "sizes": {"anyOf": [{"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                            {"type": "null"}]},
        "potential": {
            "type": "object", "additionalProperties": False, "required": ["name"],
            "properties": {"name": {"enum": ["quadratic", "dipole_gas"]},
                           "params": {"type": "object", "additionalProperties": _num}},
        },
        "sampler": {"type": "object", "additionalProperties": False, "properties": _sampler_props},
        "exact": {"type": ["boolean", "null"]},
        "seed": {"type": "integer", "minimum": 0},
        "threads": {"type": ["integer", "null"], "minimum": 1},
        "output_dir": {"type": "string", "minLength": 1},
        "check": {"type": "boolean"},
        "g": {"anyOf": [{"type": "number", "exclusiveMinimum": 0}, {"enum": ["oracle", "estimate"]}]},
        "g_sizes": {"anyOf": [{"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 3},
                              {"type": "null"}]},
        "schedule": {
            "type": "object", "additionalProperties": False,
            "properties": {"eps": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.2},
                           "c": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                           "K": {"type": "integer", "minimum": 1},
                           "window_width": _num_or_null,
                           "min_half_width": {"type": "number", "minimum": 0}},
        },
        "stats": {
            "type": "object", "additionalProperties": False,
            "properties": {"delta": _num, "beta": _num, "eta": _num, "eta_tile": _num,
                           "t_grid": _grid, "u_grid": _grid,
                           "lambda_grid": {"anyOf": [{"type": "array", "items": {"type": "array", "items": _num}},
                                                     {"type": "null"}]},
                           "n_boot": {"type": "integer", "minimum": 2}, "slack": _num, "rel_tol": _num,
                           "stride": {"type": "integer", "minimum": 1},
                           "band": {"anyOf": [{"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                                              {"type": "null"}]},
                           "var_tol": _num_or_null, "mode": {"enum": ["maximum", "high_points"]},
                           "oracle": {"type": "boolean"}, "n_grid": {"type": "integer", "minimum": 2}},
        },
        "site": _site,
        "site2": _site_or_null,
        "functional": {
            "type": "object", "additionalProperties": False,
            "properties": {"kind": {"enum": ["site", "increment", "smoothed", None]}, "x": _site,
                           "R": _num_or_null, "R1": _num_or_null, "R2": _num_or_null,
                           "width": {"type": "number", "minimum": 0}},
        },
        "boundary": {"anyOf": [_num, {
            "type": "object", "additionalProperties": False, "required": ["kind"],
            "properties": {"kind": {"enum": ["constant", "linear", "product"]},
                           "value": _num, "a": _num, "b": _num}}]},
        "r_frac": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "r_list": {"anyOf": [{"type": "array", "items": {"type": "integer", "minimum": 1}}, {"type": "null"}]},
        "Lambda": _num_or_null,
        "ensemble": {"type": ["string", "null"]},
        "save_ensembles": {"type": ["boolean", "null"]},
        "manifests": {"type": "array", "items": {"type": "string"}},
        "profile": {"enum": ["full", "smoke"]},
        "criteria": {"type": "array", "items": {"type": "integer", "minimum": 1, "maximum": 10}},
    },
}

_sampler_defaults = {k: v for k, v in SamplerConfig().to_dict().items() if k != "seed"}

DEFAULTS = {
    "experiment": None, "N": None, "sizes": None,
    "potential": {"name": "quadratic", "params": {}},
    "sampler": _sampler_defaults,
    "exact": None, "seed": 0, "threads": None, "output_dir": "glfield-out", "check": False,
    "g": None, "g_sizes": None,
    "schedule": {"eps": 0.1, "c": 0.15, "K": 4, "window_width": None, "min_half_width": 0.5},
    "stats": {"delta": 0.1, "beta": 0.2, "eta": 0.5, "eta_tile": 0.2, "t_grid": None, "u_grid": None,
              "lambda_grid": None, "n_boot": 1000, "slack": 3.0, "rel_tol": 0.2, "stride": 1, "band": None,
              "var_tol": None, "mode": "maximum", "oracle": True, "n_grid": 40},
    "site": [0, 0], "site2": None,
    "functional": {"kind": None, "x": [0, 0], "R": None, "R1": None, "R2": None, "width": 0.0},
    "boundary": 1.0, "r_frac": 0.25, "r_list": None, "Lambda": None,
    "ensemble": None, "save_ensembles": None, "manifests": [],
    "profile": "full", "criteria": list(range(1, 11)),
}

# runtime keys do not change results; they go into the manifest, not the content address
RUNTIME_KEYS = ("output_dir", "check", "threads")


def parse_json(text: str, source: str = "<config>") -> dict:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    return obj


def load(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    return parse_json(text, str(p))


def validate(cfg: dict) -> None:
    v = jsonschema.Draft202012Validator(SCHEMA)
    errs = sorted(v.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errs:
        msgs = [f"{'/'.join(str(x) for x in e.absolute_path) or '<root>'}: {e.message}" for e in errs]
        raise ConfigError("invalid config:\n  " + "\n  ".join(msgs))


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("boundary",):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve(raw: dict, kind: str | None = None, *, seed: int | None = None, threads: int | None = None,
            check: bool | None = None, env=None) -> dict:
    """Validate ``raw``, apply command-line and environment overrides, fill defaults.

    Precedence: command line, then environment (GLFIELD_THREADS,
    GLFIELD_OUTPUT_DIR), then the file, then the defaults.
    """
    validate(raw)
    env = os.environ if env is None else env
    cfg = _merge(DEFAULTS, raw)
    if kind is not None:
        if raw.get("experiment") not in (None, kind):
            raise ConfigError(f"config is for experiment {raw['experiment']!r}, not {kind!r}")
        cfg["experiment"] = kind
    if cfg["experiment"] is None:
        raise ConfigError("config does not name an experiment")
    if seed is not None:
        cfg["seed"] = int(seed)
    if threads is not None:
        cfg["threads"] = int(threads)
    elif env.get("GLFIELD_THREADS"):
        try:
            cfg["threads"] = int(env["GLFIELD_THREADS"])
        except ValueError:
            raise ConfigError(f"GLFIELD_THREADS must be an integer, got {env['GLFIELD_THREADS']!r}") from None
        if cfg["threads"] < 1:
            raise ConfigError("GLFIELD_THREADS must be >= 1")
    if cfg["threads"] is None:
        cfg["threads"] = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1
    if env.get("GLFIELD_OUTPUT_DIR"):
        cfg["output_dir"] = env["GLFIELD_OUTPUT_DIR"]
    if check is not None:
        cfg["check"] = bool(check)
    k = cfg["experiment"]
    quad = cfg["potential"]["name"] == "quadratic"
    if cfg["exact"] is None:
        cfg["exact"] = quad
    if cfg["exact"] and not quad:
        raise ConfigError("the exact sampler exists only for the quadratic potential")
    if cfg["g"] is None:
        cfg["g"] = "oracle" if quad else "estimate"
    if cfg["g"] == "oracle" and not quad:
        raise ConfigError("g = 'oracle' is available only for the quadratic potential")
    if cfg["g_sizes"] is None:
        cfg["g_sizes"] = [32, 64, 128, 256] if cfg["g"] == "oracle" else [16, 32, 64]
    if cfg["functional"]["kind"] is None:
        cfg["functional"]["kind"] = "increment" if k == "clt" else "site"
    if cfg["save_ensembles"] is None:
        cfg["save_ensembles"] = k == "sample"
    needs_N = ("sample", "high-points", "tail", "bl-check", "mgf", "increments", "clt", "truncated-count",
               "tiles")
    needs_sizes = ("estimate-g", "max-scaling", "coupling")
    if k in needs_N and cfg["N"] is None:
        raise ConfigError(f"experiment {k!r} needs N")
    if k in needs_sizes and not cfg["sizes"]:
        raise ConfigError(f"experiment {k!r} needs sizes")
    if k == "report" and not cfg["manifests"]:
        raise ConfigError("report needs at least one manifest")
    try:
        SamplerConfig(**cfg["sampler"], seed=cfg["seed"])
    except Exception as exc:
        raise ConfigError(f"sampler: {exc}") from None
    return cfg


def content(cfg: dict) -> dict:
    """The part of a resolved config that determines the results."""
    return {k: v for k, v in cfg.items() if k not in RUNTIME_KEYS}


def runtime(cfg: dict) -> dict:
    return {k: cfg[k] for k in RUNTIME_KEYS}


def address(cfg: dict) -> str:
    """Content address of a resolved config: sha256 of its content part."""
    return hashlib.sha256(json.dumps(content(cfg), sort_keys=True).encode()).hexdigest()


def sampler_config(cfg: dict, seed: int) -> SamplerConfig:
    return SamplerConfig(**cfg["sampler"], seed=seed)
