"""Versioned JSON experiment configuration."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema

from .core import CrossingTimeDist, DemandProfile, HeadwayMatrix, IntersectionSpec, ModelError
from .policies import TieRule
from .scheduler import ApproachSpec

SCHEMA_VERSION = 1

_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_PAIR = {"type": "array", "items": _NONNEG, "minItems": 2, "maxItems": 2}

SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "intersection": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "theta": {"type": "array", "minItems": 2, "maxItems": 2, "items": _PAIR},
                "crossing": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["family"],
                    "properties": {
                        "family": {"enum": ["deterministic", "uniform", "two_point", "discrete"]},
                        "value": _POS,
                        "low": _NONNEG,
                        "high": _POS,
                        "mean": _POS,
                        "var": _NONNEG,
                        "values": {"type": "array", "items": _NONNEG, "minItems": 1},
                        "probs": {"type": "array", "items": _NONNEG, "minItems": 1},
                    },
                },
                "lambda": _PAIR,
                "grid": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "lam1": {"type": "array", "items": _NONNEG, "minItems": 1},
                        "lam2": {"type": "array", "items": _NONNEG, "minItems": 1},
                        "points": {"type": "array", "items": _PAIR, "minItems": 1},
                    },
                },
            },
        },
        "policy": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "names": {"type": "array", "minItems": 1, "uniqueItems": True,
                          "items": {"enum": ["FIFO", "MS", "LQF"]}},
                "beta": _POS,
                "tie_rule": {"enum": [t.value for t in TieRule]},
                "mode": {"enum": ["exact", "aggregate"]},
            },
        },
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "horizon": _POS,
                "warmup": _NONNEG,
                "seed": {"type": "integer", "minimum": 0},
                "replications": {"type": "integer", "minimum": 1},
            },
        },
        "approach": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "L": _POS, "v_max": _POS, "a_plus": _POS,
                "a_minus": {"type": "number", "exclusiveMaximum": 0},
                "dt": _POS, "safety_gap": _POS, "duration": _POS,
            },
        },
        "region": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"rays": {"type": "integer", "minimum": 2}},
        },
        "drift": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "states": {"type": "integer", "minimum": 1},
                "samples": {"type": "integer", "minimum": 2},
                "norm_range": {"type": "array", "items": _POS, "minItems": 2, "maxItems": 2},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string", "minLength": 1}},
        },
    },
}


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


DEFAULTS: dict[str, Any] = {
    "intersection": {
        "theta": [[0.5, 1.0], [1.0, 0.5]],
        "crossing": {"family": "two_point", "mean": 0.5, "var": 0.1},
        "lambda": [0.2, 0.2],
    },
    "policy": {"names": ["FIFO", "MS", "LQF"], "beta": 1.0,
               "tie_rule": TieRule.MAINTAIN.value, "mode": "exact"},
    "simulation": {"horizon": 1e4, "seed": 0, "replications": 1},
    "approach": {"duration": 600.0},
    "region": {"rays": 101},
    "drift": {"states": 100, "samples": 100_000, "norm_range": [10.0, 100.0]},
    "output": {},
}


@dataclass
class ExperimentConfig:
    spec: IntersectionSpec
    policies: list[str]
    beta: float
    tie_rule: str
    mode: str
    horizon: float
    warmup: float | None
    seed: int
    replications: int
    approach: ApproachSpec
    micro_duration: float
    rays: int
    drift_states: int
    drift_samples: int
    drift_norm_range: tuple[float, float]
    output_dir: str | None
    grid: list[tuple[float, float]] | None = None
    raw: dict = field(default_factory=dict)

    @property
    def lam(self) -> tuple[float, float]:
        return self.spec.demand.lam


def _crossing(c: dict) -> CrossingTimeDist:
    fam = c["family"]
    need = {"deterministic": ("value",), "uniform": ("low", "high"),
            "two_point": ("mean", "var"), "discrete": ("values", "probs")}[fam]
    for key in need:
        if key not in c:
            raise ConfigError(f"intersection.crossing.{key}", f"required for family {fam!r}")
    if fam == "deterministic":
        return CrossingTimeDist.deterministic(c["value"])
    if fam == "uniform":
        return CrossingTimeDist.uniform(c["low"], c["high"])
    if fam == "two_point":
        return CrossingTimeDist.two_point(c["mean"], c["var"])
    return CrossingTimeDist.discrete(c["values"], c["probs"])


def _grid(g: dict) -> list[tuple[float, float]]:
    if "points" in g:
        if "lam1" in g or "lam2" in g:
            raise ConfigError("intersection.grid", "give either points or lam1/lam2, not both")
        return [tuple(map(float, p)) for p in g["points"]]
    for key in ("lam1", "lam2"):
        if key not in g:
            raise ConfigError(f"intersection.grid.{key}", "required")
    return [(float(a), float(b)) for a in g["lam1"] for b in g["lam2"]]


def _merged(raw: dict) -> dict:
    out = {}
    for sect, dflt in DEFAULTS.items():
        out[sect] = {**dflt, **raw.get(sect, {})}
    return out


def from_dict(raw: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Validate ``raw`` and build an ExperimentConfig.

    ``overrides`` maps dotted paths (``simulation.seed``) to scalar values.
    """
    raw = json.loads(json.dumps(raw))
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        sect, key = dotted.split(".")
        raw.setdefault(sect, {})[key] = value
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(raw),
                    key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        e = errors[0]
        path = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(path, e.message)
    m = _merged(raw)
    inter = m["intersection"]
    try:
        theta = HeadwayMatrix.of(inter["theta"])
    except ModelError as exc:
        raise ConfigError("intersection.theta", str(exc)) from None
    try:
        crossing = _crossing(inter["crossing"])
    except ModelError as exc:
        raise ConfigError("intersection.crossing", str(exc)) from None
    grid = _grid(inter["grid"]) if "grid" in inter else None
    sim = m["simulation"]
    warmup = sim.get("warmup")
    if warmup is not None and warmup >= sim["horizon"]:
        raise ConfigError("simulation.warmup", "must be below simulation.horizon")
    ap_raw = {k: v for k, v in m["approach"].items() if k != "duration"}
    try:
        approach = ApproachSpec(**ap_raw)
    except ModelError as exc:
        raise ConfigError("approach", str(exc)) from None
    lo, hi = m["drift"]["norm_range"]
    if lo > hi:
        raise ConfigError("drift.norm_range", "lower end exceeds upper end")
    spec = IntersectionSpec(theta, crossing, DemandProfile(tuple(float(x) for x in inter["lambda"])))
    return ExperimentConfig(
        spec=spec,
        policies=list(m["policy"]["names"]),
        beta=float(m["policy"]["beta"]),
        tie_rule=m["policy"]["tie_rule"],
        mode=m["policy"]["mode"],
        horizon=float(sim["horizon"]),
        warmup=None if warmup is None else float(warmup),
        seed=int(sim["seed"]),
        replications=int(sim["replications"]),
        approach=approach,
        micro_duration=float(m["approach"]["duration"]),
        rays=int(m["region"]["rays"]),
        drift_states=int(m["drift"]["states"]),
        drift_samples=int(m["drift"]["samples"]),
        drift_norm_range=(float(lo), float(hi)),
        output_dir=m["output"].get("dir"),
        grid=grid,
        raw=raw,
    )


def load(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "top level must be an object")
    return from_dict(raw, overrides)


def default_dict() -> dict:
    return {"schema_version": SCHEMA_VERSION, **{k: dict(v) for k, v in DEFAULTS.items()}}

