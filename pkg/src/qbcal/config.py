"""Experiment configuration: one YAML document per experiment.

Relative paths are resolved against the directory of the config file.  See
``demos/configs/`` for complete examples.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .emulator import OptimizerConfig
from .inference import AnnealingSchedule
from .pipeline import PipelineSettings
from .thermalbox import PARAMETERS, Variant, parameter_names


class ConfigError(ValueError):
    """The configuration document is missing, malformed or inconsistent."""


DEFAULTS = {
    "seed": 0,
    "output_dir": "results",
    "data": {"boundary": None, "observation": None, "noise_variance": None,
             "x0_seed": None},
    "models": [],
    "synthetic": None,
    "basis": {"variance_fraction": 0.99},
    "priors": {"a": 2.0, "b_mode": "default", "b": None, "a_star_c": 0.1},
    "emulator": {"restarts": 8, "selection_threshold": 2.0, "select_inputs": True,
                 "max_iter": 2000},
    "schedule": {"temperatures": 200, "chains": 64, "steps_per_temperature": 3,
                 "proposal_scale": 0.2},
    "discrepancy_schedule": None,
    "replicates": 20,
    "basis_jacobian": True,
}

SYNTHETIC_DEFAULTS = {
    "truth": "MultiLayerInfiltration",
    "truth_parameters": {},
    "variants": ["MultiLayerInfiltration", "MultiLayer", "SingleLayer"],
    "runs": 30,
    "steps": 384,
    "step_minutes": 15,
    "noise_ratio": 0.01,
    "pulse_power": 60.0,
    "boundary_seed": None,
}


def _merge(base, over, where=""):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown key {where}{k}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


@dataclass(frozen=True)
class ModelFiles:
    name: str
    ensemble: Path
    design: Path
    parameters: Path


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict
    base_dir: Path
    seed: int
    output_dir: Path
    models: tuple = field(default_factory=tuple)

    # -- accessors ---------------------------------------------------------
    @property
    def data(self):
        return self.raw["data"]

    @property
    def synthetic(self):
        return self.raw["synthetic"]

    def path(self, value):
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def boundary_path(self):
        return self.path(self.data["boundary"])

    @property
    def observation_path(self):
        return self.path(self.data["observation"])

    @property
    def replicates(self) -> int:
        return int(self.raw["replicates"])

    def hashable(self) -> dict:
        """Settings that define the experiment (paths as written, seed applied)."""
        d = copy.deepcopy(self.raw)
        d["seed"] = self.seed
        d.pop("output_dir", None)
        return d

    # -- derived settings --------------------------------------------------
    def schedule(self, key="schedule"):
        s = self.raw[key]
        if s is None:
            return None
        return AnnealingSchedule.default(int(s["temperatures"]), int(s["chains"]),
                                         int(s["steps_per_temperature"]),
                                         float(s["proposal_scale"]))

    def pipeline_settings(self) -> PipelineSettings:
        pr, em = self.raw["priors"], self.raw["emulator"]
        rate = None if pr["b_mode"] == "default" else float(pr["b"])
        return PipelineSettings(
            variance_fraction=float(self.raw["basis"]["variance_fraction"]),
            prior_shape=float(pr["a"]), prior_rate=rate, a_star_c=float(pr["a_star_c"]),
            optimizer=OptimizerConfig(int(em["restarts"]), float(em["selection_threshold"]),
                                      bool(em["select_inputs"]), int(em["max_iter"])),
            schedule=self.schedule("schedule"),
            discrepancy_schedule=self.schedule("discrepancy_schedule"),
            replicates=self.replicates, basis_jacobian=bool(self.raw["basis_jacobian"]))

    def check_inputs(self):
        """Files needed by calibrate/analyze/compare must exist."""
        missing = []
        for label, p in (("data.boundary", self.boundary_path),
                         ("data.observation", self.observation_path)):
            if p is None:
                missing.append(f"{label} is not set")
            elif not p.is_file():
                missing.append(f"{label}: {p} does not exist")
        if not self.models:
            missing.append("no models listed")
        for m in self.models:
            for label in ("ensemble", "design", "parameters"):
                p = getattr(m, label)
                if not p.is_file():
                    missing.append(f"model {m.name} {label}: {p} does not exist")
        if missing:
            raise ConfigError("; ".join(missing))


def _validate(raw):
    try:
        seed = int(raw["seed"])
    except (TypeError, ValueError):
        raise ConfigError("seed must be an integer") from None
    if seed < 0:
        raise ConfigError("seed must be nonnegative")
    vf = raw["basis"]["variance_fraction"]
    if not isinstance(vf, (int, float)) or not 0.0 < vf <= 1.0:
        raise ConfigError("basis.variance_fraction must lie in (0, 1]")
    pr = raw["priors"]
    if pr["b_mode"] not in ("default", "fixed"):
        raise ConfigError("priors.b_mode must be 'default' or 'fixed'")
    if pr["b_mode"] == "fixed" and not (isinstance(pr["b"], (int, float)) and pr["b"] > 0):
        raise ConfigError("priors.b must be a positive number when b_mode is 'fixed'")
    if not (isinstance(pr["a"], (int, float)) and pr["a"] > 0):
        raise ConfigError("priors.a must be positive")
    c = pr["a_star_c"]
    if not isinstance(c, (int, float)) or not 0.0 < c <= 1.0:
        raise ConfigError("priors.a_star_c must lie in (0, 1]")
    reps = raw["replicates"]
    if not isinstance(reps, int) or reps < 1:
        raise ConfigError("replicates must be a positive integer")
    for key in ("schedule", "discrepancy_schedule"):
        s = raw[key]
        if s is None:
            continue
        if key == "discrepancy_schedule":
            s = _merge(DEFAULTS["schedule"], s, f"{key}.")
            raw[key] = s
        if int(s["temperatures"]) < 2 or int(s["chains"]) < 1 \
                or int(s["steps_per_temperature"]) < 1 or float(s["proposal_scale"]) <= 0:
            raise ConfigError(f"{key}: temperatures >= 2, chains >= 1, "
                              "steps_per_temperature >= 1, proposal_scale > 0")
    nv = raw["data"]["noise_variance"]
    if nv is not None and not (isinstance(nv, (int, float)) and nv > 0):
        raise ConfigError("data.noise_variance must be positive")
    if raw["synthetic"] is not None:
        syn = raw["synthetic"]
        try:
            variants = [Variant(v) for v in syn["variants"]]
            truth = Variant(syn["truth"])
        except ValueError as exc:
            raise ConfigError(f"synthetic: {exc}") from None
        if not variants:
            raise ConfigError("synthetic.variants is empty")
        allowed = set(parameter_names(truth))
        for name, value in syn["truth_parameters"].items():
            if name not in allowed:
                raise ConfigError(f"synthetic.truth_parameters: {name} is not a "
                                  f"parameter of {truth.value}")
            lo, hi = PARAMETERS[name][:2]
            if not lo <= float(value) <= hi:
                raise ConfigError(f"synthetic.truth_parameters: {name}={value} outside "
                                  f"[{lo}, {hi}]")
        if int(syn["runs"]) < 2 or int(syn["steps"]) < 16 or int(syn["step_minutes"]) < 1:
            raise ConfigError("synthetic: runs >= 2, steps >= 16, step_minutes >= 1")
        if float(syn["noise_ratio"]) < 0 or float(syn["pulse_power"]) < 0:
            raise ConfigError("synthetic: noise_ratio and pulse_power must be nonnegative")
    return seed


def _models(raw, base_dir):
    out = []
    names = set()
    for i, m in enumerate(raw["models"] or []):
        if not isinstance(m, dict) or "name" not in m:
            raise ConfigError(f"models[{i}] needs at least a name")
        unknown = set(m) - {"name", "ensemble", "design", "parameters"}
        if unknown:
            raise ConfigError(f"models[{i}]: unknown keys {sorted(unknown)}")
        name = str(m["name"])
        if name in names:
            raise ConfigError(f"duplicate model name {name}")
        names.add(name)

        def p(key, default):
            v = Path(m.get(key, default))
            return v if v.is_absolute() else base_dir / v
        out.append(ModelFiles(name, p("ensemble", f"{name}/ensemble.csv"),
                              p("design", f"{name}/design.csv"),
                              p("parameters", f"{name}/parameters.json")))
    return tuple(out)


def load_config(path=None, seed=None, out=None, text=None) -> ExperimentConfig:
    """Read and validate a config document; ``seed`` and ``out`` override it."""
    if text is None:
        if path is None:
            raise ConfigError("no config given")
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        doc = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    raw = _merge(DEFAULTS, doc)
    if raw["synthetic"] is not None:
        if not isinstance(raw["synthetic"], dict):
            raise ConfigError("synthetic must be a mapping")
        raw["synthetic"] = _merge(SYNTHETIC_DEFAULTS, raw["synthetic"], "synthetic.")
    if seed is not None:
        raw["seed"] = seed
    base_dir = Path(path).resolve().parent if path is not None else Path.cwd()
    s = _validate(raw)
    output_dir = Path(out) if out is not None else Path(raw["output_dir"])
    if not output_dir.is_absolute() and out is None:
        output_dir = base_dir / output_dir
    return ExperimentConfig(raw, base_dir, s, output_dir, _models(raw, base_dir))
