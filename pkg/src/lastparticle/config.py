"""Experiment configuration: JSON schema, validation, model construction.

Configurations are JSON objects validated field by field before any
simulation; unknown keys are rejected and every error carries the offending
field path.  A model is either a catalog entry with parameters or an
expression-defined diffusion (drift coordinates, diffusion matrix entries
and level function over ``y1..yd``, plus a deterministic starting point on
the zero level set).
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import expressions as ex
from ._fastpath import HAVE_NUMBA, njit
from .models import CATALOG, build_model
from .process import DiffusionModel

_TOP_KEYS = {
    "model", "n_particles", "step", "max_steps", "level_grid", "replicates",
    "seed", "workers", "out_dir", "checks", "observable", "reference",
    "committor", "variance", "validate", "wave",
}
_CHECK_NAMES = {"clt", "j1", "l2", "bounds"}


class ConfigError(ValueError):
    """Schema validation failure; ``problems`` lists all field errors."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  "
                         + "\n  ".join(self.problems))


@dataclass(frozen=True)
class ModelExpression:
    """An expression-defined diffusion over variables y1..yd."""

    dim: int
    drift: tuple          # d source strings
    diffusion: tuple      # d rows of n source strings
    level: str
    init: tuple           # starting point on the zero level set

    def parse(self):
        drift_nodes = [ex.parse_expression(s) for s in self.drift]
        dif_nodes = [[ex.parse_expression(s) for s in row]
                     for row in self.diffusion]
        level_node = ex.parse_expression(self.level)
        return drift_nodes, dif_nodes, level_node


def _expression_kernels(drift_nodes, dif_nodes, level_node, dim, noise_dim):
    if not HAVE_NUMBA:
        return None
    lines = ["def _drift(x, out):"]
    lines += [f"    out[{i}] = {ex.to_scalar_source(n)}"
              for i, n in enumerate(drift_nodes)]
    lines += ["def _dif(x, out):"]
    lines += [f"    out[{i}, {j}] = {ex.to_scalar_source(nd)}"
              for i, row in enumerate(dif_nodes)
              for j, nd in enumerate(row)]
    lines += ["def _lev(x):",
              f"    return {ex.to_scalar_source(level_node)}"]
    namespace = {"np": np}
    exec("\n".join(lines), namespace)
    try:
        return (njit(cache=False)(namespace["_drift"]),
                njit(cache=False)(namespace["_dif"]),
                njit(cache=False)(namespace["_lev"]))
    except Exception:
        return None


def build_expression_model(spec: ModelExpression, step: float,
                           max_steps: int,
                           absorb_threshold: float = -1.0) -> DiffusionModel:
    drift_nodes, dif_nodes, level_node = spec.parse()
    d = spec.dim
    n = len(dif_nodes[0]) if dif_nodes else d
    if len(drift_nodes) != d:
        raise ConfigError([f"model.drift: expected {d} components"])
    if len(dif_nodes) != d or any(len(r) != n for r in dif_nodes):
        raise ConfigError(["model.diffusion: ragged or wrong-shape matrix"])
    for node, what in ([(level_node, "model.level")]
                       + [(nd, f"model.drift[{i}]")
                          for i, nd in enumerate(drift_nodes)]
                       + [(nd, f"model.diffusion[{i}][{j}]")
                          for i, row in enumerate(dif_nodes)
                          for j, nd in enumerate(row)]):
        over = [v for v in ex.free_variables(node) if v >= d]
        if over:
            raise ConfigError(
                [f"{what}: variable y{over[0] + 1} exceeds dim {d}"])
        if not np.isfinite(ex.evaluate(node, np.zeros(d))):
            raise ConfigError([f"{what}: not finite at the origin"])

    drift_fns = [ex.compile_vectorized(nd, d) for nd in drift_nodes]
    dif_fns = [[ex.compile_vectorized(nd, d) for nd in row]
               for row in dif_nodes]
    level_fn = ex.compile_vectorized(level_node, d)
    init = np.asarray(spec.init, dtype=float).reshape(d)
    lv0 = float(level_fn(init))
    if abs(lv0) > 1e-9:
        raise ConfigError(
            [f"model.init: level at the start point is {lv0}, not 0"])

    dif_is_const = all(not ex.free_variables(nd)
                       for row in dif_nodes for nd in row)
    dif_const = np.array([[ex.evaluate(nd, np.zeros(d)) for nd in row]
                          for row in dif_nodes]) if dif_is_const else None

    def drift(x):
        return np.array([float(f(x)) for f in drift_fns])

    def drift_vec(x):
        return np.stack([f(x) for f in drift_fns], axis=-1)

    def diffusion(x):
        return np.array([[float(f(x)) for f in row] for row in dif_fns])

    return DiffusionModel(
        dim=d,
        noise_dim=n,
        drift=drift,
        diffusion=diffusion,
        level=lambda x: float(level_fn(x)),
        init_sampler=lambda rng: init.copy(),
        step=step,
        max_steps=max_steps,
        absorb_threshold=absorb_threshold,
        name="expression",
        drift_vec=drift_vec,
        level_vec=level_fn,
        diffusion_const=dif_const,
        init_sampler_vec=lambda m, rng: np.tile(init, (m, 1)),
        kernels=_expression_kernels(drift_nodes, dif_nodes, level_node,
                                    d, n),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description; echoes into every report."""

    seed: int
    model_name: Optional[str] = None
    model_params: dict = field(default_factory=dict)
    model_expression: Optional[ModelExpression] = None
    n_particles: int = 100
    step: Optional[float] = None
    max_steps: Optional[int] = None
    level_grid: tuple = ()
    replicates: int = 1
    workers: int = 1
    out_dir: str = "out"
    checks: tuple = ("clt", "j1", "l2", "bounds")
    observable: Optional[str] = None
    reference: Optional[dict] = None
    committor: Optional[dict] = None
    variance: Optional[dict] = None
    validate: Optional[dict] = None
    wave: Optional[dict] = None

    def build_model(self) -> DiffusionModel:
        if self.model_expression is not None:
            return build_expression_model(
                self.model_expression,
                step=self.step if self.step is not None else 1e-3,
                max_steps=self.max_steps if self.max_steps is not None
                else 200_000)
        return build_model(self.model_name, self.model_params,
                           step=self.step, max_steps=self.max_steps)

    def to_dict(self) -> dict:
        model: dict = {}
        if self.model_expression is not None:
            me = self.model_expression
            model = {"dim": me.dim, "drift": list(me.drift),
                     "diffusion": [list(r) for r in me.diffusion],
                     "level": me.level, "init": list(me.init)}
        else:
            model = {"name": self.model_name,
                     "params": dict(self.model_params)}
        out = {"model": model, "n_particles": self.n_particles,
               "seed": self.seed, "replicates": self.replicates,
               "workers": self.workers, "out_dir": self.out_dir,
               "checks": list(self.checks)}
        if self.step is not None:
            out["step"] = self.step
        if self.max_steps is not None:
            out["max_steps"] = self.max_steps
        if self.level_grid:
            out["level_grid"] = list(self.level_grid)
        for key in ("observable", "reference", "committor", "variance",
                    "validate", "wave"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val if not isinstance(val, dict) else dict(val)
        return out


def _expect(problems, cond, message):
    if not cond:
        problems.append(message)
    return cond


def parse_config(source: str) -> ExperimentConfig:
    """Parse and validate a configuration from a path or a JSON string."""
    text = source
    if not source.lstrip().startswith("{"):
        if not os.path.exists(source):
            raise ConfigError([f"config file not found: {source}"])
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError([f"not valid JSON: {err}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a JSON object"])

    problems: list = []
    for key in raw:
        if key not in _TOP_KEYS:
            problems.append(f"{key}: unknown key")

    def get(key, typ, default=None, required=False):
        if key not in raw:
            if required:
                problems.append(f"{key}: missing required field")
            return default
        val = raw[key]
        if typ is float and isinstance(val, int) \
                and not isinstance(val, bool):
            val = float(val)
        if not isinstance(val, typ) or isinstance(val, bool) \
                and typ is not bool:
            problems.append(f"{key}: expected {typ.__name__}")
            return default
        return val

    seed = get("seed", int, required=True)
    n_particles = get("n_particles", int, default=100)
    if n_particles is not None and n_particles < 2:
        problems.append("n_particles: must be >= 2")
    step = get("step", float)
    if step is not None and not step > 0:
        problems.append("step: must be positive")
    max_steps = get("max_steps", int)
    if max_steps is not None and max_steps < 1:
        problems.append("max_steps: must be positive")
    replicates = get("replicates", int, default=1)
    if replicates is not None and replicates < 1:
        problems.append("replicates: must be >= 1")
    workers = get("workers", int, default=1)
    if workers is not None and workers < 1:
        problems.append("workers: must be >= 1")
    out_dir = get("out_dir", str, default="out")

    level_grid: tuple = ()
    if "level_grid" in raw:
        lg = raw["level_grid"]
        if not isinstance(lg, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool)
                for v in lg):
            problems.append("level_grid: expected a list of numbers")
        else:
            vals = [float(v) for v in lg]
            if any(v < 0.0 or v > 1.0 for v in vals):
                problems.append("level_grid: levels must lie in [0, 1]")
            else:
                level_grid = tuple(sorted(vals))

    checks: tuple = ("clt", "j1", "l2", "bounds")
    if "checks" in raw:
        cl = raw["checks"]
        if not isinstance(cl, list) or not all(isinstance(c, str)
                                               for c in cl):
            problems.append("checks: expected a list of strings")
        else:
            unknown = [c for c in cl if c not in _CHECK_NAMES]
            if unknown:
                problems.append(
                    f"checks: unknown check {unknown[0]!r} "
                    f"(allowed: {sorted(_CHECK_NAMES)})")
            checks = tuple(cl)

    observable = get("observable", str)
    if observable is not None:
        try:
            ex.parse_expression(observable)
        except ex.ExpressionError as err:
            problems.append(f"observable: {err}")

    model_name = None
    model_params: dict = {}
    model_expression = None
    if "model" not in raw:
        problems.append("model: missing required field")
    else:
        model = raw["model"]
        if not isinstance(model, dict):
            problems.append("model: expected an object")
        elif "name" in model:
            for key in model:
                if key not in {"name", "params"}:
                    problems.append(f"model.{key}: unknown key")
            model_name = model.get("name")
            if model_name not in CATALOG:
                problems.append(
                    f"model.name: unknown model {model_name!r} "
                    f"(catalog: {sorted(CATALOG)})")
            params = model.get("params", {})
            if not isinstance(params, dict):
                problems.append("model.params: expected an object")
            else:
                model_params = params
        else:
            for key in model:
                if key not in {"dim", "drift", "diffusion", "level",
                               "init"}:
                    problems.append(f"model.{key}: unknown key")
            try:
                dim = int(model["dim"])
                drift = tuple(str(s) for s in model["drift"])
                diffusion = tuple(tuple(str(s) for s in row)
                                  for row in model["diffusion"])
                level = str(model["level"])
                init = tuple(float(v) for v in model["init"])
                model_expression = ModelExpression(
                    dim=dim, drift=drift, diffusion=diffusion, level=level,
                    init=init)
                for label, src in ([("model.level", level)]
                                   + [(f"model.drift[{i}]", s)
                                      for i, s in enumerate(drift)]
                                   + [(f"model.diffusion[{i}][{j}]", s)
                                      for i, row in enumerate(diffusion)
                                      for j, s in enumerate(row)]):
                    try:
                        ex.parse_expression(src)
                    except ex.ExpressionError as err:
                        problems.append(f"{label}: {err}")
            except (KeyError, TypeError, ValueError) as err:
                problems.append(
                    "model: expression models need dim, drift, diffusion, "
                    f"level and init ({err})")

    for key in ("reference", "committor", "variance", "validate", "wave"):
        if key in raw and not isinstance(raw[key], dict):
            problems.append(f"{key}: expected an object")

    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(
        seed=seed, model_name=model_name, model_params=model_params,
        model_expression=model_expression, n_particles=n_particles,
        step=step, max_steps=max_steps, level_grid=level_grid,
        replicates=replicates, workers=workers, out_dir=out_dir,
        checks=checks, observable=observable,
        reference=raw.get("reference"), committor=raw.get("committor"),
        variance=raw.get("variance"), validate=raw.get("validate"),
        wave=raw.get("wave"))
