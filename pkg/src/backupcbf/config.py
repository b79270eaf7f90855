"""Scenario files: JSON schema, loading and translation into simulation configs."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .integrate import HorizonGrid
from .models import AircraftParams, aircraft_scenario, double_integrator_scenario
from .models.aircraft import trim_state
from .sim import CONTROLLERS, SimConfig


class ConfigError(ValueError):
    """Raised for any schema or parameter validation failure."""


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_PAIR = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}

_AIRCRAFT_FIELDS = {
    f.name: (_PAIR if isinstance(f.default, tuple) else _NUM)
    for f in dataclasses.fields(AircraftParams)
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["scenario", "horizon", "sim"],
    "properties": {
        "scenario": {"enum": ["double_integrator", "aircraft"]},
        "model": {"type": "object"},
        "controller": {"enum": list(CONTROLLERS)},
        "controllers": {
            "type": "array", "items": {"enum": list(CONTROLLERS)}, "minItems": 1, "uniqueItems": True,
        },
        "horizon": {
            "type": "object",
            "additionalProperties": False,
            "required": ["T", "N", "dt_int"],
            "properties": {"T": _POS, "N": {"type": "integer", "minimum": 1}, "dt_int": _POS},
        },
        "sim": {
            "type": "object",
            "additionalProperties": False,
            "required": ["t_final", "dt_ctrl", "dt_plant"],
            "properties": {
                "t_final": {"type": "number", "minimum": 0},
                "dt_ctrl": _POS,
                "dt_plant": _POS,
                "x0": {"type": "array", "items": _NUM},
            },
        },
        "blending": {
            "type": "object", "additionalProperties": False, "properties": {"eta": _POS},
        },
        "alpha": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"alpha": _POS, "alpha_b": _POS},
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "prefix": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
                "record_wall_time": {"type": "boolean"},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
    },
    "oneOf": [{"required": ["controller"]}, {"required": ["controllers"]}],
}

MODEL_SCHEMAS = {
    "double_integrator": {
        "type": "object", "additionalProperties": False, "properties": {"kappa": _POS},
    },
    "aircraft": {"type": "object", "additionalProperties": False, "properties": _AIRCRAFT_FIELDS},
}


@dataclass(frozen=True)
class RunPlan:
    """Everything ``run`` needs: one SimConfig per controller plus output settings."""

    name: str
    scenario: str
    configs: dict
    out_dir: Path | None
    prefix: str
    record_wall_time: bool
    seed: int


def _validate(doc) -> None:
    try:
        jsonschema.validate(doc, SCHEMA)
        jsonschema.validate(doc.get("model", {}), MODEL_SCHEMAS[doc["scenario"]])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None


def build_plan(doc: dict, name: str = "run") -> RunPlan:
    """Validate a parsed scenario document and build the simulation configs."""
    _validate(doc)
    scenario = doc["scenario"]
    model = doc.get("model", {})
    gains = doc.get("alpha", {})
    alpha, alpha_b = gains.get("alpha", 1.0), gains.get("alpha_b", 1.0)
    try:
        if scenario == "aircraft":
            kw = {k: tuple(v) if isinstance(v, list) else float(v) for k, v in model.items()}
            prm = AircraftParams(**kw)
            plant = aircraft_scenario(prm, alpha=alpha, alpha_b=alpha_b)
            default_x0 = trim_state(prm=prm)
        else:
            plant = double_integrator_scenario(alpha=alpha, alpha_b=alpha_b, kappa=model.get("kappa", 10.0))
            default_x0 = np.array([-1.0, 0.0])
        hz = doc["horizon"]
        grid = HorizonGrid(hz["T"], hz["N"], hz["dt_int"])
        sim = doc["sim"]
        x0 = np.asarray(sim.get("x0", default_x0), dtype=float)
        eta = doc.get("blending", {}).get("eta", 10.0)
        names = doc.get("controllers") or [doc["controller"]]
        configs = {
            c: SimConfig(plant, c, x0, sim["t_final"], sim["dt_ctrl"], sim["dt_plant"], grid=grid, eta=eta)
            for c in names
        }
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = doc.get("output", {})
    return RunPlan(
        name=name,
        scenario=scenario,
        configs=configs,
        out_dir=Path(out["dir"]) if "dir" in out else None,
        prefix=out.get("prefix", name),
        record_wall_time=out.get("record_wall_time", False),
        seed=doc.get("seed", 0),
    )


def load_plan(path) -> RunPlan:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return build_plan(doc, name=path.stem)


def shipped_scenario(name: str) -> Path:
    """Path of a scenario file bundled with the package."""
    p = resources.files("backupcbf") / "scenarios" / name
    if not p.is_file():
        raise FileNotFoundError(name)
    return Path(str(p))
