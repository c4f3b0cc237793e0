"""Scenario, mission and bench-spec documents, and result writers.

Inputs are JSON validated against the schemas below; every error is raised
as :class:`ScenarioFormatError` with a line number (syntax errors) or a
field path (schema and semantic errors).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .core import MeasurementModel
from .exceptions import ScenarioFormatError
from .nlp import FovSpec, Scenario
from .simkit import Mission
from .theory import select_zeta

FORMAT_VERSION = 1

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_VEC3 = {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}
_MAT3 = {"type": "array", "items": _VEC3, "minItems": 3, "maxItems": 3}
_COV = {"oneOf": [_POS, _MAT3]}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["version", "setpoints", "num_landmarks", "r_min", "r_max", "sigma_m"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": FORMAT_VERSION},
        "name": {"type": "string"},
        "setpoints": {"type": "array", "items": _VEC3, "minItems": 1},
        "num_landmarks": {"type": "integer", "minimum": 0},
        "r_min": _POS,
        "r_max": _POS,
        "sigma_m": _POS,
        "prior": _COV,
        "setpoint_priors": {"type": "array", "items": _COV},
        "delta": {"oneOf": [{"type": "number", "minimum": 0}, {"const": "auto"}]},
        "eta": _POS,
        "r_tol": _POS,
        "zeta": {"type": "number", "exclusiveMinimum": 1},
        "fov": {
            "type": "object",
            "required": ["alpha_deg"],
            "additionalProperties": False,
            "properties": {
                "alpha_deg": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 360},
                "landmark_height": _NUM,
            },
        },
        "seed": {"type": "integer", "minimum": 0},
    },
}

MISSION_SCHEMA = {
    "type": "object",
    "required": ["version", "waypoints"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": FORMAT_VERSION},
        "name": {"type": "string"},
        "waypoints": {"type": "array", "items": _VEC3, "minItems": 2},
        "speed": _POS,
        "dt": _POS,
        "odom_noise": {"type": "number", "minimum": 0},
        "bearing_fix_interval": {"type": "integer", "minimum": 1},
        "setpoint_spacing": _POS,
        "fov_alpha_deg": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 360},
        "seed": {"type": "integer", "minimum": 0},
    },
}

_POS_INTS = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}
_POS_NUMS = {"type": "array", "items": _POS, "minItems": 1}

BENCH_SCHEMA = {
    "type": "object",
    "required": ["version"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": FORMAT_VERSION},
        "N_list": _POS_INTS,
        "M_list": _POS_INTS,
        "instances": {"type": "integer", "minimum": 1},
        "runs": {"type": "integer", "minimum": 1},
        "sphere_radius": _POS,
        "sigma_m": _POS,
        "sigma_list": _POS_NUMS,
        "noise_N": {"type": "integer", "minimum": 1},
        "noise_M": {"type": "integer", "minimum": 1},
        "prior_var": _POS,
        "r_min": _POS,
        "r_max": _POS,
        "tables": {
            "type": "array",
            "items": {"enum": ["size", "noise"]},
            "uniqueItems": True,
        },
        "algorithms": {
            "type": "array",
            "items": {"enum": ["ours", "greedy", "evolutionary"]},
            "uniqueItems": True,
        },
        "starts": {"type": "integer", "minimum": 1},
        "evo_generations": {"type": "integer", "minimum": 1},
        "evo_population": {"type": "integer", "minimum": 4},
        "grid_spacing": _POS,
        "seed": {"type": "integer", "minimum": 0},
    },
}


def _read_json(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioFormatError(f"{path}: cannot read file ({exc.strerror})") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(
            f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc


def _field(parts):
    return "/".join(str(p) for p in parts) or "<root>"


def _validate(doc, schema, path):
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ScenarioFormatError(f"{path}: field '{_field(e.absolute_path)}': {e.message}")


def _fail(path, name, msg):
    raise ScenarioFormatError(f"{path}: field '{name}': {msg}")


def _covariance(value, path, name):
    if isinstance(value, (int, float)):
        return float(value) * np.eye(3)
    C = np.asarray(value, float)
    if not np.allclose(C, C.T, rtol=0, atol=1e-12 * max(1.0, np.abs(C).max())):
        _fail(path, name, "covariance must be symmetric")
    if np.linalg.eigvalsh(C)[0] <= 0:
        _fail(path, name, "covariance must be positive definite")
    return C


@dataclass
class ScenarioDoc:
    """A loaded scenario plus the settings that are not part of the problem."""

    scenario: Scenario
    eta: float
    r_tol: float
    delta_mode: str
    theory: Optional[object] = None
    raw: dict = field(default_factory=dict)


def parse_scenario(doc, path="<scenario>"):
    """Validate a scenario document and build the :class:`Scenario`.

    ``delta = "auto"`` resolves to ``0.5 * r_min / zeta`` with zeta from
    :func:`select_zeta`.
    """
    _validate(doc, SCENARIO_SCHEMA, path)
    r_min, r_max = doc["r_min"], doc["r_max"]
    if not r_min < r_max:
        _fail(path, "r_min", f"r_min ({r_min}) must be less than r_max ({r_max})")
    M = doc["num_landmarks"]
    eta = doc.get("eta", 0.1)
    r_tol = doc.get("r_tol", 10.0 * r_min)
    sigma = doc["sigma_m"]
    prior = _covariance(doc.get("prior", 30.0), path, "prior")
    theory = None
    if M >= 1:
        try:
            if "zeta" in doc:
                from .theory import TheoryParams

                theory = TheoryParams.from_zeta(eta, doc["zeta"], r_min, M, sigma, r_tol)
            else:
                theory = select_zeta(max(r_tol, r_min), r_min, M, sigma, eta)
        except ValueError as exc:
            _fail(path, "r_tol", str(exc))
    delta = doc.get("delta", "auto")
    mode = "auto" if delta == "auto" else "manual"
    if delta == "auto":
        delta = 0.0 if theory is None else 0.5 * theory.delta_max
    overrides = None
    if "setpoint_priors" in doc:
        sp = doc["setpoint_priors"]
        if len(sp) != len(doc["setpoints"]):
            _fail(path, "setpoint_priors", "needs one entry per setpoint")
        overrides = np.array(
            [np.linalg.inv(_covariance(v, path, f"setpoint_priors/{i}")) for i, v in enumerate(sp)]
        )
    fov = None
    if "fov" in doc:
        f = doc["fov"]
        height = f.get("landmark_height", 0.0)
        if abs(height) >= r_max:
            _fail(path, "fov/landmark_height", "must lie strictly inside the r_max ball")
        fov = FovSpec(math.radians(f["alpha_deg"]), height)
    model = MeasurementModel(sigma, np.linalg.inv(prior), float(delta))
    try:
        scenario = Scenario(
            np.asarray(doc["setpoints"], float), M, r_min, r_max, model, fov,
            doc.get("seed", 0), overrides,
        )
    except ValueError as exc:
        raise ScenarioFormatError(f"{path}: {exc}") from exc
    return ScenarioDoc(scenario, eta, r_tol, mode, theory, doc)


def load_scenario(path):
    return parse_scenario(_read_json(path), str(path))


def scenario_to_doc(scenario, eta=0.1, r_tol=None, delta=None):
    """Serialize a :class:`Scenario` (shared prior only) to a document."""
    doc = {
        "version": FORMAT_VERSION,
        "setpoints": scenario.setpoints.tolist(),
        "num_landmarks": scenario.M,
        "r_min": scenario.r_min,
        "r_max": scenario.r_max,
        "sigma_m": scenario.model.sigma_m,
        "prior": np.linalg.inv(scenario.model.prior_info).tolist(),
        "delta": scenario.model.delta if delta is None else delta,
        "eta": eta,
        "seed": scenario.seed,
    }
    if r_tol is not None:
        doc["r_tol"] = r_tol
    if scenario.fov is not None:
        doc["fov"] = {
            "alpha_deg": math.degrees(scenario.fov.alpha),
            "landmark_height": scenario.fov.landmark_height,
        }
    return doc


@dataclass
class MissionDoc:
    mission: Mission
    setpoint_spacing: float


def parse_mission(doc, path="<mission>"):
    _validate(doc, MISSION_SCHEMA, path)
    alpha = doc.get("fov_alpha_deg")
    try:
        mission = Mission(
            np.asarray(doc["waypoints"], float),
            speed=doc.get("speed", 1.0),
            odom_noise=doc.get("odom_noise", 0.05),
            bearing_fix_interval=doc.get("bearing_fix_interval", 10),
            rng_seed=doc.get("seed", 0),
            dt=doc.get("dt", 1.0),
            fov_alpha=None if alpha is None else math.radians(alpha),
        )
    except ValueError as exc:
        raise ScenarioFormatError(f"{path}: {exc}") from exc
    return MissionDoc(mission, doc.get("setpoint_spacing", 7.5))


def load_mission(path):
    return parse_mission(_read_json(path), str(path))


@dataclass
class BenchSpec:
    """Benchmark sweep definition; defaults give the team-size and noise sweeps."""

    N_list: list = field(default_factory=lambda: [5, 10, 20])
    M_list: list = field(default_factory=lambda: [2, 5, 10])
    instances: int = 10
    runs: int = 10
    sphere_radius: float = 40.0
    sigma_m: float = 0.1
    sigma_list: list = field(default_factory=lambda: [2.0**-k for k in range(6)])
    noise_N: int = 10
    noise_M: int = 5
    prior_var: float = 30.0
    r_min: float = 2.0
    r_max: float = 60.0
    tables: list = field(default_factory=lambda: ["size", "noise"])
    algorithms: list = field(default_factory=lambda: ["ours", "greedy", "evolutionary"])
    starts: int = 10
    evo_generations: Optional[int] = None
    evo_population: Optional[int] = None
    grid_spacing: Optional[float] = None
    seed: int = 0


def parse_bench_spec(doc, path="<bench>"):
    _validate(doc, BENCH_SCHEMA, path)
    kw = {k: v for k, v in doc.items() if k != "version"}
    spec = BenchSpec(**kw)
    if not spec.r_min < spec.r_max:
        _fail(path, "r_min", "r_min must be less than r_max")
    return spec


def load_bench_spec(path):
    return parse_bench_spec(_read_json(path), str(path))


# writers


def _clean(obj):
    """Convert numpy containers and non-finite floats for JSON output."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, doc):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n")


def fmt(value):
    """Locale-independent, round-trippable number formatting for CSV cells."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return "" if value is None else str(value)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(row.get(h)) for h in header])


def placement_rows(placement):
    """Long-format CSV rows describing a placement."""
    rows = []
    for j, z in enumerate(placement.landmarks):
        rows.append({"kind": "landmark", "index": j, "x": z[0], "y": z[1], "z": z[2], "value": ""})
    for i, c in enumerate(placement.per_setpoint_cost):
        row = {"kind": "setpoint_cost", "index": i, "x": "", "y": "", "z": "", "value": c}
        rows.append(row)
    if placement.headings is not None:
        for i, h in enumerate(placement.headings):
            rows.append({"kind": "heading", "index": i, "x": h[0], "y": h[1], "z": "", "value": ""})
    rows.append({"kind": "max_cost", "index": "", "x": "", "y": "", "z": "", "value": placement.max_cost})
    return rows


PLACEMENT_HEADER = ["kind", "index", "x", "y", "z", "value"]


def placement_doc(placement, scenario_doc=None, algorithm="ours", extra=None):
    doc = {
        "version": FORMAT_VERSION,
        "algorithm": algorithm,
        "landmarks": placement.landmarks,
        "headings": placement.headings,
        "per_setpoint_cost": placement.per_setpoint_cost,
        "max_cost": placement.max_cost,
        "feasible": placement.feasible,
        "max_violation": placement.max_violation,
    }
    if scenario_doc is not None:
        sc = scenario_doc.scenario
        doc["delta"] = sc.model.delta
        doc["delta_mode"] = scenario_doc.delta_mode
        if scenario_doc.theory is not None:
            doc["theory"] = scenario_doc.theory.as_dict()
    if extra:
        doc.update(extra)
    return doc


def read_placement(path):
    """Landmarks (M, 3) from a placement document."""
    doc = _read_json(path)
    try:
        return np.asarray(doc["landmarks"], float).reshape(-1, 3)
    except (KeyError, ValueError) as exc:
        raise ScenarioFormatError(f"{path}: field 'landmarks': {exc}") from exc
