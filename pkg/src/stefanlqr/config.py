"""Canonical JSON run configuration.

A run is fully described by one JSON document with sections for the mesh,
the physical parameters, the time discretization, the LQR design, the
boundary perturbations, and a seed.  Unknown keys are rejected so config
typos fail loudly; the seed makes randomly drawn pulse values reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import jsonschema

from .fem import InterfaceJumpOutput, IntervalOutput, PhysicalParams, \
    PointOutput
from .mesh import SegmentLayout
from .pipeline import LqrDesign, default_point_outputs
from .stefan_sim import PerturbationPulse, PerturbationSchedule, SimConfig


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


_OUTPUT_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "properties": {
                "type": {"const": "point"},
                "x": {"type": "number"},
                "y": {"type": "number"},
            },
            "required": ["type", "x", "y"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "type": {"const": "interval"},
                "edge": {"enum": ["left", "right", "bottom", "top"]},
                "lo": {"type": "number"},
                "hi": {"type": "number"},
            },
            "required": ["type", "edge", "lo", "hi"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"type": {"const": "interface-jump"}},
            "required": ["type"],
            "additionalProperties": False,
        },
    ]
}

RUN_CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "mesh": {
            "type": "object",
            "properties": {
                "nx": {"type": "integer", "minimum": 1},
                "ny": {"type": "integer", "minimum": 2},
                "interface_height": {"type": "number",
                                     "exclusiveMinimum": 0.0,
                                     "exclusiveMaximum": 1.0},
                "layout": {
                    "type": "object",
                    "properties": {
                        "cool_segments": {
                            "type": "array",
                            "items": {"type": "array",
                                      "items": {"type": "number"},
                                      "minItems": 2, "maxItems": 2},
                            "minItems": 1,
                        },
                        "input_segments": {
                            "type": "array",
                            "items": {"type": "array",
                                      "items": {"type": "number"},
                                      "minItems": 2, "maxItems": 2},
                            "minItems": 1,
                        },
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "physics": {
            "type": "object",
            "properties": {
                "t_end": {"type": "number", "exclusiveMinimum": 0.0},
                "k_s": {"type": "number", "exclusiveMinimum": 0.0},
                "k_l": {"type": "number", "exclusiveMinimum": 0.0},
                "theta_cool": {"type": "number"},
                "theta_melt": {"type": "number"},
                "latent_heat": {"type": "number", "exclusiveMinimum": 0.0},
            },
            "additionalProperties": False,
        },
        "time": {
            "type": "object",
            "properties": {
                "n_t": {"type": "integer", "minimum": 1},
                "tau_min": {"type": "number", "exclusiveMinimum": 0.0},
                "tau_max": {"type": "number", "exclusiveMinimum": 0.0},
            },
            "additionalProperties": False,
        },
        "design": {
            "type": "object",
            "properties": {
                "lambda": {"type": "number", "exclusiveMinimum": 0.0},
                "inputs": {"enum": ["aggregated", "independent"]},
                "outputs": {"type": "array", "items": _OUTPUT_SCHEMA},
                "bdf_order": {"enum": [1, 2]},
            },
            "additionalProperties": False,
        },
        "desired_motion": {
            "type": "object",
            "properties": {"shift": {"type": "number"}},
            "additionalProperties": False,
        },
        "perturbations": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "start": {"type": "number", "minimum": 0.0},
                    "n_steps": {"type": "integer", "minimum": 1},
                    "segment": {"enum": ["cool-1", "cool-2", "both"]},
                    "value": {"type": ["number", "null"]},
                },
                "required": ["start", "n_steps", "segment"],
                "additionalProperties": False,
            },
        },
        "seed": {"type": "integer", "minimum": 0},
    },
    "additionalProperties": False,
}

_DEFAULTS = {
    "mesh": {"nx": 20, "ny": 40, "interface_height": 0.5},
    "physics": {"t_end": 1.0, "k_s": 6.0, "k_l": 10.0, "theta_cool": -1.0,
                "theta_melt": 0.0, "latent_heat": 10.0},
    "time": {"n_t": 400, "tau_min": 1e-4, "tau_max": 2.5e-3},
    "design": {"lambda": 1e-6, "inputs": "aggregated",
               "outputs": [{"type": "point", "x": 0.0, "y": 0.5},
                           {"type": "point", "x": 0.5, "y": 0.5}],
               "bdf_order": 1},
    "desired_motion": {"shift": 0.0},
    "perturbations": [],
    "seed": 0,
}


def _merge(defaults, overrides):
    out = {}
    for key, value in defaults.items():
        if isinstance(value, dict):
            out[key] = _merge(value, overrides.get(key, {})) \
                if isinstance(overrides.get(key), dict) else dict(value)
        else:
            out[key] = overrides.get(key, value)
    for key in ("layout",):
        if isinstance(overrides, dict) and key in overrides:
            out[key] = overrides[key]
    for key, value in overrides.items():
        if key not in out:
            out[key] = value
    return out


def _output_from_dict(d):
    if d["type"] == "point":
        return PointOutput(d["x"], d["y"])
    if d["type"] == "interval":
        return IntervalOutput(d["edge"], d["lo"], d["hi"])
    return InterfaceJumpOutput()


def _output_to_dict(out):
    if isinstance(out, PointOutput):
        return {"type": "point", "x": out.x, "y": out.y}
    if isinstance(out, IntervalOutput):
        return {"type": "interval", "edge": out.edge, "lo": out.lo,
                "hi": out.hi}
    return {"type": "interface-jump"}


@dataclass(frozen=True)
class RunConfig:
    """Validated run description; see :data:`RUN_CONFIG_SCHEMA`."""

    document: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = _merge(_DEFAULTS, self.document)
        try:
            jsonschema.validate(self.document, RUN_CONFIG_SCHEMA)
            jsonschema.validate(merged, RUN_CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"invalid run configuration: {exc.message}") \
                from exc
        if merged["time"]["tau_min"] > merged["time"]["tau_max"]:
            raise ConfigError("tau_min must not exceed tau_max")
        object.__setattr__(self, "document", merged)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config root must be a JSON object")
        return cls(doc)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def canonical_json(self) -> str:
        return json.dumps(self.document, sort_keys=True, indent=2) + "\n"

    def with_overrides(self, **sections) -> "RunConfig":
        doc = json.loads(json.dumps(self.document))
        for key, sub in sections.items():
            if isinstance(sub, dict):
                doc.setdefault(key, {}).update(sub)
            else:
                doc[key] = sub
        return RunConfig(doc)

    @property
    def seed(self) -> int:
        return self.document["seed"]

    def build(self):
        """Instantiate (SimConfig, LqrDesign, PerturbationSchedule).

        Pulse entries with a null value get one drawn uniformly from
        [-|theta_cool|, |theta_cool|] with the configured seed, in listed
        order.
        """
        doc = self.document
        params = PhysicalParams(
            k_s=doc["physics"]["k_s"], k_l=doc["physics"]["k_l"],
            theta_cool=doc["physics"]["theta_cool"],
            theta_melt=doc["physics"]["theta_melt"],
            latent_heat=doc["physics"]["latent_heat"],
            t_end=doc["physics"]["t_end"])
        layout_doc = doc["mesh"].get("layout")
        if layout_doc is None:
            layout = SegmentLayout()
        else:
            layout = SegmentLayout(
                cool_segments=tuple((lo, hi) for lo, hi
                                    in layout_doc["cool_segments"]),
                input_segments=tuple(("top", lo, hi) for lo, hi
                                     in layout_doc["input_segments"]))
        shift = doc["desired_motion"]["shift"]
        h0 = doc["mesh"]["interface_height"]
        t_end = params.t_end
        desired = None if shift == 0.0 \
            else (lambda t: h0 + shift * t / t_end)
        cfg = SimConfig(
            params=params, nx=doc["mesh"]["nx"], ny=doc["mesh"]["ny"],
            interface_height=h0, tau_min=doc["time"]["tau_min"],
            tau_max=doc["time"]["tau_max"], n_t=doc["time"]["n_t"],
            desired_height=desired, layout=layout)
        outputs = tuple(_output_from_dict(d)
                        for d in doc["design"]["outputs"])
        design = LqrDesign(
            lam=doc["design"]["lambda"],
            aggregate_inputs=doc["design"]["inputs"] == "aggregated",
            outputs=outputs if outputs else default_point_outputs(),
            bdf_order=doc["design"]["bdf_order"])
        if not doc["design"]["outputs"]:
            design = LqrDesign(lam=design.lam,
                               aggregate_inputs=design.aggregate_inputs,
                               outputs=(), bdf_order=design.bdf_order)
        rng = np.random.default_rng(doc["seed"])
        bound = abs(params.theta_cool)
        pulses = []
        for entry in doc["perturbations"]:
            value = entry.get("value")
            if value is None:
                value = float(rng.uniform(-bound, bound))
            pulses.append(PerturbationPulse(entry["start"], entry["n_steps"],
                                            entry["segment"], value))
        schedule = PerturbationSchedule(pulses=tuple(pulses),
                                        ref_tau=cfg.ref_tau)
        return cfg, design, schedule
