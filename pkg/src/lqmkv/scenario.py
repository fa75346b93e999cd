"""JSON scenario files: schema, line-aware validation and problem construction."""

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .apps import LiquidationParams, ResourceParams, liquidation_problem, resource_problem
from .errors import DomainError, ScenarioError
from .factors import FACTOR_TYPES, factor_from_dict
from .io import content_hash
from .model import LqmkvProblem
from .simulate import SimulationConfig

SCHEMA_VERSION = 1
OUTPUTS = ("value", "gains", "mean_path", "diagnostics", "figures")

_number = {"type": "number"}
_tensor = {"anyOf": [_number, {"type": "array"}]}

_factor = {
    "type": "object",
    "properties": {
        "type": {"enum": sorted(FACTOR_TYPES)},
        "x0": _number,
        "mu": _number,
        "sigma": {"type": "number", "minimum": 0},
        "kappa": {"type": "number", "exclusiveMinimum": 0},
        "theta": _number,
        "shared_noise": {"type": ["integer", "null"], "minimum": 0},
    },
    "required": ["type", "x0"],
    "additionalProperties": False,
}

_channel = {
    "anyOf": [
        _tensor,
        {
            "type": "object",
            "properties": {"intercept": _tensor, "loading": _tensor},
            "required": ["intercept"],
            "additionalProperties": False,
        },
    ]
}

_coefficient_names = ["B", "Bt", "C", "Ct", "D", "Dt", "F", "Ft", "Q", "Qt", "N", "Nt", "I", "It"]
_channel_names = ["beta", "gamma", "M", "H", "L"]

_generic = {
    "type": "object",
    "properties": {
        "d": {"type": "integer", "minimum": 1},
        "m": {"type": "integer", "minimum": 1},
        "n_noises": {"type": "integer", "minimum": 0},
        "horizon": {"anyOf": [{"type": "number", "exclusiveMinimum": 0}, {"type": "null"}]},
        "rho": {"type": "number", "minimum": 0},
        "coefficients": {
            "type": "object",
            "properties": {k: _tensor for k in _coefficient_names},
            "additionalProperties": False,
        },
        "channels": {
            "type": "object",
            "properties": {k: _channel for k in _channel_names},
            "additionalProperties": False,
        },
        "P": _tensor,
        "Pt": _tensor,
        "x0_mean": _tensor,
        "x0_cov": _tensor,
        "factor": {"anyOf": [_factor, {"type": "null"}]},
    },
    "required": ["d", "m", "horizon"],
    "additionalProperties": False,
}

_liquidation = {
    "type": "object",
    "properties": {
        "x0": _number,
        "T": {"type": "number", "exclusiveMinimum": 0},
        "q": {"type": "number", "minimum": 0},
        "p": {"type": "number", "minimum": 0},
        "nu": {"type": "number", "minimum": 0},
        "eta": {"type": "number", "exclusiveMinimum": 0},
        "price": _factor,
    },
    "additionalProperties": False,
}

_resource = {
    "type": "object",
    "properties": {
        "rho": {"type": "number", "exclusiveMinimum": 0},
        "sigma": {"type": "number", "minimum": 0},
        "c": {"type": "number", "exclusiveMinimum": 0},
        "delta": _number,
        "eps": _number,
        "eta": _number,
        "x0": _number,
        "price": _factor,
    },
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "kind": {"enum": ["generic", "liquidation", "resource"]},
        "problem": _generic,
        "liquidation": _liquidation,
        "resource": _resource,
        "solver": {
            "type": "object",
            "properties": {
                "steps_per_unit": {"type": "integer", "minimum": 1},
                "adjoint_steps_per_unit": {"type": "integer", "minimum": 1},
                "allow_unverified": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "simulation": {
            "type": "object",
            "properties": {
                "n_particles": {"type": "integer", "minimum": 2},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "mean_mode": {"enum": ["analytic", "empirical"]},
                "antithetic": {"type": "boolean"},
                "factor_sharing": {"enum": ["independent", "common"]},
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "records": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "verify": {
            "type": "object",
            "properties": {
                "eps": {"type": "number", "exclusiveMinimum": 0},
                "direction": _tensor,
                "direction_decay": {"type": "number", "minimum": 0},
                "scales": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "delay": {"type": "number", "exclusiveMinimum": 0},
                "n_sigma": {"type": "number", "exclusiveMinimum": 0},
                "ratio_bounds": {"type": "array", "items": _number, "minItems": 2, "maxItems": 2},
            },
            "additionalProperties": False,
        },
        "outputs": {"type": "array", "items": {"enum": list(OUTPUTS)}, "uniqueItems": True},
        "output_dir": {"type": "string"},
    },
    "required": ["schema_version", "kind"],
    "additionalProperties": False,
    "allOf": [
        {"if": {"properties": {"kind": {"const": "generic"}}}, "then": {"required": ["problem"]}},
    ],
}


@dataclass(frozen=True)
class VerifySettings:
    eps: float = 1.0
    direction: np.ndarray | None = None
    direction_decay: float = 0.0
    scales: tuple = (0.8, 1.2)
    delay: float = 0.1
    n_sigma: float = 3.0
    ratio_bounds: tuple = (3.5, 4.5)

    def direction_fn(self, m):
        vec = np.ones(m) if self.direction is None else np.broadcast_to(self.direction, (m,)).astype(float)
        decay = self.direction_decay
        return lambda t: vec * np.exp(-decay * t)


@dataclass(frozen=True)
class Scenario:
    """A validated scenario ready to run."""

    raw: dict
    kind: str
    name: str
    problem: LqmkvProblem
    params: object = None
    solver: dict = field(default_factory=dict)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    verify: VerifySettings = field(default_factory=VerifySettings)
    outputs: tuple = OUTPUTS
    output_dir: str = "."

    @property
    def hash(self):
        return content_hash(self.raw)


def _locate(text, path):
    """Best-effort line number of the JSON node at ``path``."""
    pos = 0
    for key in path:
        if isinstance(key, int):
            continue
        match = re.compile(r'"' + re.escape(str(key)) + r'"\s*:').search(text, pos)
        if match is None:
            break
        pos = match.start()
    return text.count("\n", 0, pos) + 1


def _schema_error(text, err):
    path = list(err.absolute_path)
    if err.validator == "additionalProperties":
        extra = re.findall(r"'([^']+)'", err.message)
        if extra:
            path = path + [extra[0]]
    where = "/".join(str(p) for p in err.absolute_path) or "<root>"
    return ScenarioError(f"{where}: {err.message}", _locate(text, path))


def parse(text):
    """Parse and schema-check scenario text; returns the raw dictionary."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(exc.msg, exc.lineno) from None
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: (len(list(e.absolute_path)), str(e.absolute_path)))
    if errors:
        raise _schema_error(text, errors[0])
    return raw


def _channel_value(spec):
    if isinstance(spec, dict):
        return (spec["intercept"], spec.get("loading"))
    return spec


def _factor(spec):
    return None if spec is None else factor_from_dict(spec)


def _build_generic(spec, name):
    kw = dict(spec.get("coefficients", {}))
    for key, val in spec.get("channels", {}).items():
        kw[key] = _channel_value(val)
    return LqmkvProblem.create(
        spec["d"], spec["m"], n_noises=spec.get("n_noises", 1), horizon=spec["horizon"],
        rho=spec.get("rho", 0.0), factor=_factor(spec.get("factor")),
        x0_mean=spec.get("x0_mean", 0.0), x0_cov=spec.get("x0_cov", 0.0),
        P=spec.get("P", 0.0), Pt=spec.get("Pt", 0.0), name=name, **kw)


def build(raw, text=""):
    """Turn a schema-valid dictionary into a :class:`Scenario`."""
    kind = raw["kind"]
    name = raw.get("name", kind)
    params = None
    try:
        if kind == "generic":
            problem = _build_generic(raw["problem"], name)
        elif kind == "liquidation":
            spec = dict(raw.get("liquidation", {}))
            if "price" in spec:
                spec["price"] = _factor(spec["price"])
            params = LiquidationParams(**spec)
            problem = liquidation_problem(params)
        else:
            spec = dict(raw.get("resource", {}))
            if "price" in spec:
                spec["price"] = _factor(spec["price"])
            params = ResourceParams(**spec)
            problem = resource_problem(params)
        sim = SimulationConfig(**raw.get("simulation", {}))
        vspec = dict(raw.get("verify", {}))
        if "direction" in vspec:
            vspec["direction"] = np.asarray(vspec["direction"], dtype=float)
        for key in ("scales", "ratio_bounds"):
            if key in vspec:
                vspec[key] = tuple(vspec[key])
        if problem.is_finite:
            verify = VerifySettings(**vspec)
        else:
            verify = VerifySettings(**{"direction_decay": 1.0, "eps": 0.1, "delay": 1.0, **vspec})
    except (DomainError, TypeError, ValueError) as exc:
        section = {"generic": "problem"}.get(kind, kind)
        raise ScenarioError(str(exc), _locate(text, [section]) if text else None) from None
    return Scenario(raw=raw, kind=kind, name=name, problem=problem, params=params,
                    solver=dict(raw.get("solver", {})), simulation=sim, verify=verify,
                    outputs=tuple(raw.get("outputs", OUTPUTS)), output_dir=raw.get("output_dir", "."))


def loads(text):
    return build(parse(text), text)


def load(path):
    return loads(Path(path).read_text())


def bundled(name):
    """Path of a scenario shipped with the package (``liquidation``, ``resource``, ``zero``)."""
    return Path(__file__).with_name("scenarios") / f"{name}.json"
