"""Experiment configuration: a versioned YAML document resolved into model, drivers and obstacles."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..drivers import parse_driver, parse_family
from ..errors import ConfigError, DriverError, LatticeError
from ..lattice import AdaptedProcess, LatticeModel, model_from_dict
from . import generators as gen

SCHEMA_VERSION = 1
TASKS = ("solve", "reflect", "stop", "game", "priors", "verify")
OBSTACLE_KINDS = ("constant", "ramp", "put", "call", "martingale", "random")
RANDOM_KINDS = ("martingale", "random")
TOP_KEYS = {"version", "task", "seed", "model", "driver", "family", "obstacle", "terminal", "tolerances", "caps",
            "output", "refine", "eps", "control", "suites", "instances", "S"}


@dataclass
class ExperimentConfig:
    task: str
    model: dict
    seed: int | None = None
    driver: object = None
    family: object = None
    obstacle: dict | None = None
    terminal: dict | None = None
    tolerances: dict = field(default_factory=lambda: {"exact": 1e-10, "skorokhod": 1e-12})
    caps: dict = field(default_factory=lambda: {"nodes": 64, "rows": 5_000_000})
    output: str = "out"
    refine: tuple = (8, 16, 32, 64)
    eps: tuple = (0.1, 0.01, 0.001)
    control: int = 0
    suites: tuple | None = None
    instances: int | None = None
    S: tuple = (0, 0)

    # resolution ------------------------------------------------------------------
    def build_model(self) -> LatticeModel:
        try:
            return model_from_dict(self.model)
        except (LatticeError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"model: {exc}") from exc

    def build_driver(self, model: LatticeModel):
        if self.driver is None:
            raise ConfigError(f"task {self.task!r} needs a 'driver'")
        try:
            return parse_driver(self.driver, model.marks)
        except DriverError as exc:
            raise ConfigError(f"driver: {exc}") from exc

    def build_family(self, model: LatticeModel):
        if self.family is None:
            raise ConfigError(f"task {self.task!r} needs a 'family'")
        try:
            return parse_family(self.family, model.marks)
        except DriverError as exc:
            raise ConfigError(f"family: {exc}") from exc

    def build_obstacle(self, model: LatticeModel, spec: dict | None = None, what: str = "obstacle") -> AdaptedProcess:
        spec = self.obstacle if spec is None else spec
        if spec is None:
            raise ConfigError(f"task {self.task!r} needs an '{what}'")
        return build_process(model, spec, self.seed, what)


def build_process(model: LatticeModel, spec: dict, seed: int | None, what: str = "obstacle") -> AdaptedProcess:
    """Named adapted-process generators."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"{what} must be a mapping with a 'kind'")
    kind = spec["kind"]
    try:
        if kind == "constant":
            return model.constant_adapted(float(spec.get("value", 0.0)))
        if kind == "ramp":
            return gen.ramp_obstacle(model, float(spec.get("a", 0.0)), float(spec.get("b", 0.0)))
        if kind == "put":
            return gen.put_obstacle(model, float(spec.get("strike", 1.0)), float(spec.get("vol", 0.3)),
                                    float(spec.get("jump", 0.1)))
        if kind == "call":
            s, v, j = float(spec.get("strike", 1.0)), float(spec.get("vol", 0.3)), float(spec.get("jump", 0.1))
            return AdaptedProcess([np.maximum(np.exp(v * model.brownian_state(i) + j * model.mark_sum(i)) - s, 0.0)
                                   for i in range(model.N + 1)])
        if kind in RANDOM_KINDS:
            if seed is None:
                raise ConfigError(f"{what} kind {kind!r} is randomized and needs a 'seed'")
            rng = gen.rng_for(seed, 1000)
            if kind == "martingale":
                return gen.martingale_obstacle(rng, model)
            return gen.random_obstacle(rng, model, float(spec.get("lo", -2.0)), float(spec.get("hi", 2.0)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: {exc}") from exc
    raise ConfigError(f"unknown {what} kind {kind!r}; expected one of {', '.join(OBSTACLE_KINDS)}")


def _int_tuple(v, name):
    if isinstance(v, str):
        v = [s for s in v.split(",") if s.strip()]
    try:
        return tuple(int(x) for x in v)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be a list of integers") from exc


def parse_config(doc) -> ExperimentConfig:
    """Validate a loaded document and build the config."""
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a mapping")
    unknown = set(doc) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
    if doc.get("version") != SCHEMA_VERSION:
        raise ConfigError(f"configuration 'version' must be {SCHEMA_VERSION}")
    task = doc.get("task")
    if task not in TASKS:
        raise ConfigError(f"'task' must be one of {', '.join(TASKS)}")
    seed = doc.get("seed")
    if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool)):
        raise ConfigError("'seed' must be an integer")
    if task == "verify" and seed is None:
        raise ConfigError("task 'verify' is randomized and needs a 'seed'")
    model = doc.get("model")
    if task != "verify" and not isinstance(model, dict):
        raise ConfigError("'model' must be a mapping")
    out = doc.get("output", "out")
    if isinstance(out, dict):
        out = out.get("dir", "out")
    cfg = ExperimentConfig(task=task, model=model or {}, seed=seed, driver=doc.get("driver"),
                           family=doc.get("family"), obstacle=doc.get("obstacle"), terminal=doc.get("terminal"),
                           output=str(out))
    if "tolerances" in doc:
        cfg.tolerances = {**cfg.tolerances, **dict(doc["tolerances"])}
    if "caps" in doc:
        cfg.caps = {**cfg.caps, **dict(doc["caps"])}
    if "refine" in doc:
        cfg.refine = _int_tuple(doc["refine"], "refine")
    if "eps" in doc:
        try:
            cfg.eps = tuple(float(e) for e in doc["eps"])
        except (TypeError, ValueError) as exc:
            raise ConfigError("'eps' must be a list of numbers") from exc
    if "control" in doc:
        cfg.control = int(doc["control"])
    if "instances" in doc and doc["instances"] is not None:
        cfg.instances = int(doc["instances"])
    if "S" in doc:
        cfg.S = _int_tuple(doc["S"], "S")
    if "suites" in doc and doc["suites"] is not None:
        from .suites import SUITES

        names = tuple(doc["suites"])
        bad = [n for n in names if n not in SUITES]
        if bad:
            raise ConfigError(f"unknown suites: {', '.join(bad)}")
        cfg.suites = names
    for key in ("obstacle", "terminal"):
        spec = doc.get(key)
        if spec is not None:
            if not isinstance(spec, dict) or spec.get("kind") not in OBSTACLE_KINDS:
                raise ConfigError(f"{key} needs a 'kind' among {', '.join(OBSTACLE_KINDS)}")
            if spec["kind"] in RANDOM_KINDS and seed is None:
                raise ConfigError(f"{key} kind {spec['kind']!r} is randomized and needs a 'seed'")
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse configuration {path}: {exc}") from exc
    return parse_config(doc)
