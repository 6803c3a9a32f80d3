"""Run configuration: one JSON document validated against a versioned schema."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .grid import FlowField, Grid, Metric, build_grid, builtin_flow, load_flow_csv
from .spectral import Tolerances

SCHEMA_VERSION = 1

_pos = {"type": "number", "exclusiveMinimum": 0}
_times = {"type": "array", "items": _pos, "minItems": 1}

SCHEMA = {
    "type": "object",
    "required": ["schema_version", "grid", "theta", "flow"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "grid": {
            "type": "object",
            "required": ["axes"],
            "additionalProperties": False,
            "properties": {
                "axes": {
                    "type": "array", "minItems": 1, "maxItems": 2,
                    "items": {
                        "type": "object",
                        "required": ["topology", "nodes"],
                        "additionalProperties": False,
                        "properties": {
                            "topology": {"enum": ["periodic", "line", "circle", "torus"]},
                            "nodes": {"type": "integer", "minimum": 8},
                            "extent": {"type": "array", "items": {"type": "number"},
                                       "minItems": 2, "maxItems": 2},
                        },
                    },
                }
            },
        },
        "theta": _pos,
        "flow": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "name": {"type": "string"},
                "params": {"type": "object", "additionalProperties": {"type": "number"}},
                "csv": {"type": "string"},
            },
            "oneOf": [{"required": ["name"]}, {"required": ["csv"]}],
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: _pos for k in ("tol_zero", "eps_gamma", "eps_e", "eps_div")},
        },
        "seed": {"type": "integer", "minimum": 0},
        "jobs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "spectrum": {
                    "type": "object", "additionalProperties": False,
                    "properties": {"mode": {"enum": ["auto", "dense", "iterative"]},
                                   "k": {"type": "integer", "minimum": 1},
                                   "shift": {"type": "number"}},
                },
                "index": {"type": "object", "additionalProperties": False,
                          "properties": {"T": _times}},
                "partition": {"type": "object", "additionalProperties": False,
                              "properties": {"T": _times}},
                "evolve": {
                    "type": "object", "additionalProperties": False,
                    "properties": {"center": {"type": "array", "items": {"type": "number"}},
                                   "width": _pos, "t": _pos, "dt": _pos, "rtol": _pos,
                                   "l1_tol": _pos},
                },
                "simulate": {
                    "type": "object", "additionalProperties": False,
                    "properties": {"samples": {"type": "integer", "minimum": 1},
                                   "t": _pos, "dt": _pos,
                                   "init": {"type": "array", "items": {"type": "number"}},
                                   "l1_tol": _pos},
                },
                "nicolai": {
                    "type": "object", "additionalProperties": False,
                    "properties": {"draws": {"type": "integer", "minimum": 1},
                                   "thetas": _times, "T": _pos, "dt": _pos,
                                   "resolution": {"type": "integer", "minimum": 10},
                                   "range": {"type": "array", "items": {"type": "number"},
                                             "minItems": 2, "maxItems": 2},
                                   "half_step": {"type": "boolean"},
                                   "expected": {"type": "integer"}},
                },
                "cpd": {
                    "type": "object", "additionalProperties": False,
                    "properties": {"known": {"type": "array", "items": {"type": "integer", "minimum": 0},
                                             "minItems": 1},
                                   "t": _pos,
                                   "centers": {"type": "array", "items": {"type": "number"}},
                                   "widths": {"type": "array", "items": _pos}},
                },
                "correlate": {
                    "type": "object", "additionalProperties": False,
                    "properties": {"observable": {"enum": ["fourier", "position"]},
                                   "k": {"type": "integer"},
                                   "t_max": _pos,
                                   "points": {"type": "integer", "minimum": 3},
                                   "gap_sweep": _times},
                },
            },
        },
    },
}


class ConfigError(ValueError):
    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer or "/"
        self.detail = message


def _pointer(path) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in path)


@dataclass
class RunConfig:
    raw: dict
    base: Path
    grid: Grid
    metric: Metric
    flow: FlowField
    tolerances: Tolerances
    eps_div: float
    seed: int
    jobs: dict = field(default_factory=dict)

    def job(self, name: str) -> dict:
        return dict(self.jobs.get(name, {}))

    def with_theta(self, theta: float) -> "RunConfig":
        return RunConfig(self.raw, self.base, self.grid, Metric.isotropic(theta, self.grid.dim),
                         self.flow, self.tolerances, self.eps_div, self.seed, self.jobs)


def parse_config(doc: dict, base: Path | str = ".", seed: int | None = None,
                 tol_zero: float | None = None) -> RunConfig:
    """Validate ``doc`` and build the grid, metric and flow it describes."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        e = errors[0]
        raise ConfigError(_pointer(e.absolute_path), e.message)
    base = Path(base)
    try:
        grid = build_grid(doc["grid"])
    except ValueError as exc:
        raise ConfigError("/grid", str(exc)) from exc
    metric = Metric.isotropic(doc["theta"], grid.dim)
    fspec = doc["flow"]
    try:
        if "csv" in fspec:
            path = (base / fspec["csv"]).resolve()
            if not path.exists():
                raise ConfigError("/flow/csv", f"file not found: {path}")
            flow = load_flow_csv(path, grid)
        else:
            flow = builtin_flow(fspec["name"], grid, **fspec.get("params", {}))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("/flow", str(exc)) from exc
    tol = doc.get("tolerances", {})
    tolerances = Tolerances(
        zero=tol_zero if tol_zero is not None else tol.get("tol_zero", Tolerances.zero),
        eps_gamma=tol.get("eps_gamma", Tolerances.eps_gamma),
        eps_e=tol.get("eps_e", Tolerances.eps_e),
    )
    if not tolerances.zero > 0:
        raise ConfigError("/tolerances/tol_zero", "must be positive")
    return RunConfig(
        raw=doc, base=base, grid=grid, metric=metric, flow=flow, tolerances=tolerances,
        eps_div=tol.get("eps_div", 1e-12), seed=int(seed if seed is not None else doc.get("seed", 0)),
        jobs=doc.get("jobs", {}),
    )


def load_config(path: Path | str, seed: int | None = None, tol_zero: float | None = None) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError("/", f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("/", f"invalid JSON: {exc}") from exc
    return parse_config(doc, path.parent, seed, tol_zero)
