"""Experiment configuration: one JSON object per experiment.

Example::

    {
      "target": {"kind": "gaussian", "lambda": 0.01},
      "flow": {"family": "particle", "name": "ai_svgd", "particles": 1000, "dt": 0.01},
      "T": 15,
      "report_interval": 0.1,
      "seeds": {"dynamics": 1, "probe": 0},
      "output_dir": "out"
    }
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from ..errors import ConfigError
from ..gaussian_flows import FLOW_NAMES as GAUSSIAN_FLOWS
from ..particle_flows import FLOWS as PARTICLE_FLOWS, KERNEL_FAMILIES

# kinds with reference statistics
TARGET_KINDS = ("gaussian", "logconcave", "rosenbrock")

# initial distributions of the benchmark experiments
DEFAULT_INITIAL = {
    "gaussian": ([10.0, 10.0], [[0.5, 0.0], [0.0, 2.0]]),
    "logconcave": ([10.0, 10.0], [[4.0, 0.0], [0.0, 4.0]]),
    "rosenbrock": ([0.0, 0.0], [[4.0, 0.0], [0.0, 4.0]]),
}

DEFAULT_REPORT_INTERVAL = 0.1


@dataclass(frozen=True)
class FlowConfig:
    family: str
    name: str
    dt: float = 0.01
    particles: int = 1000
    kernel: Optional[str] = None
    kappa: Optional[float] = None
    hessian_mode: Optional[str] = None
    quadrature: str = "unscented"


@dataclass(frozen=True)
class ExperimentConfig:
    target: Dict[str, Any]
    flow: FlowConfig
    T: float
    report_interval: float = DEFAULT_REPORT_INTERVAL
    dynamics_seed: int = 0
    probe_seed: int = 0
    output_dir: str = "."
    initial_mean: Optional[tuple] = None
    initial_cov: Optional[tuple] = None
    integration: Dict[str, Any] = field(default_factory=dict)
    label: Optional[str] = None
    source: Optional[str] = None

    @property
    def lam(self):
        return self.target.get("lambda")

    @property
    def steps_per_report(self) -> int:
        return int(round(self.report_interval / self.flow.dt))

    @property
    def n_reports(self) -> int:
        return int(round(self.T / self.report_interval))

    def initial_moments(self):
        return np.array(self.initial_mean, dtype=float), np.array(self.initial_cov, dtype=float)

    def name(self) -> str:
        if self.label:
            return self.label
        lam = self.lam
        tag = "" if lam is None else f"_lam{lam:g}"
        return f"{self.target['kind']}{tag}_{self.flow.family}_{self.flow.name}"


def _require(cond, msg, where):
    if not cond:
        raise ConfigError(f"{where}: {msg}")


def _divides(a, b):
    q = b / a
    return abs(q - round(q)) < 1e-9 * max(1.0, q) and round(q) >= 1


def _as_int(value, key, where):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ConfigError(f"{where}: {key} must be an integer")
    return int(value)


def config_from_dict(data: Dict[str, Any], source: str = "<dict>") -> ExperimentConfig:
    """Validate a raw dictionary; every problem raises :class:`ConfigError`."""
    where = source
    _require(isinstance(data, dict), "config must be a JSON object", where)
    known = {"target", "flow", "T", "report_interval", "seeds", "output_dir", "initial",
             "integration", "label", "sweep"}
    extra = set(data) - known
    _require(not extra, f"unknown keys {sorted(extra)}", where)

    target = data.get("target")
    _require(isinstance(target, dict), "missing target object", where)
    kind = target.get("kind")
    _require(kind in TARGET_KINDS, f"unknown target kind {kind!r}", where)
    if kind in ("logconcave", "rosenbrock") or (kind == "gaussian" and "mean" not in target):
        _require(isinstance(target.get("lambda"), (int, float)) and target["lambda"] > 0,
                 "target.lambda must be a positive number", where)

    flow = data.get("flow")
    _require(isinstance(flow, dict), "missing flow object", where)
    family = flow.get("family")
    _require(family in ("particle", "gaussian"), "flow.family must be particle or gaussian", where)
    name = flow.get("name")
    allowed = PARTICLE_FLOWS if family == "particle" else GAUSSIAN_FLOWS
    _require(name in allowed, f"unknown {family} flow {name!r}", where)
    _require(name != "stein_bilinear", "stein_bilinear needs callables and is API-only", where)
    dt = flow.get("dt", 0.01)
    _require(isinstance(dt, (int, float)) and dt > 0, "flow.dt must be positive", where)
    kernel = flow.get("kernel")
    _require(kernel is None or kernel in KERNEL_FAMILIES, f"unknown kernel {kernel!r}", where)
    particles = _as_int(flow.get("particles", 1000), "flow.particles", where)
    _require(particles >= 1, "flow.particles must be positive", where)
    if family == "particle" and name in ("ai_langevin", "ai_svgd"):
        _require(particles >= 3, f"{name} needs at least dim + 1 particles", where)
    _require(flow.get("quadrature", "unscented") in ("unscented", "gauss_hermite"),
             "flow.quadrature must be unscented or gauss_hermite", where)
    _require(flow.get("hessian_mode") in (None, "analytic", "stein_gradient"),
             "flow.hessian_mode must be analytic or stein_gradient", where)
    kappa = flow.get("kappa")
    _require(kappa is None or (isinstance(kappa, (int, float)) and kappa + 2 > 0),
             "flow.kappa must satisfy dim + kappa > 0", where)
    fc = FlowConfig(family, name, float(dt), particles, kernel, flow.get("kappa"),
                    flow.get("hessian_mode"), flow.get("quadrature", "unscented"))

    T = data.get("T")
    _require(isinstance(T, (int, float)) and T > 0, "T must be positive", where)
    ri = data.get("report_interval", DEFAULT_REPORT_INTERVAL)
    _require(isinstance(ri, (int, float)) and ri > 0, "report_interval must be positive", where)
    _require(_divides(dt, ri), "flow.dt must divide report_interval", where)
    _require(_divides(ri, T), "report_interval must divide T", where)

    seeds = data.get("seeds")
    _require(isinstance(seeds, dict) and "dynamics" in seeds and "probe" in seeds,
             "seeds.dynamics and seeds.probe must be given explicitly", where)
    dyn = _as_int(seeds["dynamics"], "seeds.dynamics", where)
    probe = _as_int(seeds["probe"], "seeds.probe", where)
    _require(0 <= dyn < 2**64 and 0 <= probe < 2**64, "seeds must be 64-bit unsigned", where)

    initial = data.get("initial")
    if initial is None:
        _require(kind in DEFAULT_INITIAL, f"target kind {kind} needs an explicit initial", where)
        mean, cov = DEFAULT_INITIAL[kind]
    else:
        mean, cov = initial.get("mean"), initial.get("cov")
    try:
        mean_arr = np.atleast_1d(np.asarray(mean, dtype=float))
        cov_arr = np.atleast_2d(np.asarray(cov, dtype=float))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: initial mean/cov must be numeric") from exc
    dim = len(target["mean"]) if "mean" in target else 2
    _require(mean_arr.shape == (dim,) and cov_arr.shape == (dim, dim),
             f"initial mean/cov must have dimension {dim}", where)
    _require(np.allclose(cov_arr, cov_arr.T) and np.all(np.linalg.eigvalsh(cov_arr) > 0),
             "initial cov must be SPD", where)

    integration = data.get("integration", {})
    _require(isinstance(integration, dict), "integration must be an object", where)

    return ExperimentConfig(
        target=dict(target), flow=fc, T=float(T), report_interval=float(ri),
        dynamics_seed=dyn, probe_seed=probe, output_dir=str(data.get("output_dir", ".")),
        initial_mean=tuple(mean_arr.tolist()), initial_cov=tuple(map(tuple, cov_arr.tolist())),
        integration=dict(integration), label=data.get("label"), source=source,
    )


def load_raw(path) -> Dict[str, Any]:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: file not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def load_config(path) -> ExperimentConfig:
    raw = load_raw(path)
    if isinstance(raw, dict) and "sweep" in raw:
        raise ConfigError(f"{path}: sweep files must be run with the sweep command")
    return config_from_dict(raw, str(path))


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def sweep_configs(raw: Dict[str, Any], lambdas=None, source: str = "<dict>"):
    """Expand a base config into a list of configs.

    ``raw["sweep"]`` is an optional list of override objects; ``lambdas``
    additionally crosses every entry with ``target.lambda`` values.
    """
    raw = dict(raw)
    overrides = raw.pop("sweep", None) or [{}]
    if not isinstance(overrides, list) or not all(isinstance(o, dict) for o in overrides):
        raise ConfigError(f"{source}: sweep must be a list of objects")
    out = []
    for i, ov in enumerate(overrides):
        merged = deep_merge(raw, ov)
        for lam in (lambdas if lambdas else [None]):
            item = merged if lam is None else deep_merge(merged, {"target": {"lambda": lam}})
            if "label" in item and (len(overrides) > 1 or lambdas):
                item = dict(item)
                item.pop("label")
            out.append(config_from_dict(item, f"{source}[{i}]"
                                        + ("" if lam is None else f"(lambda={lam:g})")))
    return out


def parse_lambdas(text: str):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"invalid lambda list {text!r}") from exc
    if not vals or any(not (v > 0 and math.isfinite(v)) for v in vals):
        raise ConfigError(f"invalid lambda list {text!r}")
    return vals
