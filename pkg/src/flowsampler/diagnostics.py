"""Summary statistics, reference moments and error metrics.

Three statistics are tracked for every sampler: the mean, the covariance and
``E[cos(omega^T theta + b)]`` for a fixed set of random probes.  Reference
values are exact for Gaussian targets.  For the logconcave and Rosenbrock
benchmarks one coordinate is Gaussian given the other, so it is integrated in
closed form and the remaining 1D integral is done by a midpoint rule.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionError, TruncationError
from .gaussian_flows import GaussianMoments
from .particle_flows import Ensemble
from .targets import TargetModel

N_PROBES = 20
CACHE_ENV = "FLOWSAMPLER_CACHE"
DEFAULT_INTERVALS = {"rosenbrock": (-40.0, 42.0), "logconcave": (-30.0, 30.0)}
TAIL_TOLERANCE = 1e-10


@dataclass(frozen=True)
class CosProbe:
    omega: Tuple[float, ...]
    b: float


def draw_probes(seed: int, dim: int, n: int = N_PROBES) -> Tuple[CosProbe, ...]:
    """``omega ~ N(0, I)`` and ``b ~ U(0, 2 pi)`` from a dedicated probe stream."""
    rng = np.random.default_rng(seed)
    omegas = rng.standard_normal((n, dim))
    bs = rng.uniform(0.0, 2.0 * math.pi, n)
    return tuple(CosProbe(tuple(float(v) for v in w), float(b)) for w, b in zip(omegas, bs))


def _probe_arrays(probes):
    omega = np.array([p.omega for p in probes], dtype=float)
    b = np.array([p.b for p in probes], dtype=float)
    return omega, b


@dataclass(frozen=True, eq=False)
class ReferenceStats:
    """Mean, covariance and one cosine expectation per probe."""

    mean: np.ndarray
    cov: np.ndarray
    cos_values: np.ndarray
    probes: Optional[Tuple[CosProbe, ...]] = field(default=None)

    def to_json(self) -> dict:
        out = {
            "mean": [float(v) for v in self.mean],
            "cov": [[float(v) for v in row] for row in self.cov],
            "cos_values": [float(v) for v in self.cos_values],
        }
        if self.probes is not None:
            out["probes"] = [{"omega": list(p.omega), "b": p.b} for p in self.probes]
        return out

    @classmethod
    def from_json(cls, data: dict) -> "ReferenceStats":
        probes = None
        if "probes" in data:
            probes = tuple(CosProbe(tuple(p["omega"]), float(p["b"])) for p in data["probes"])
        return cls(np.array(data["mean"], dtype=float), np.array(data["cov"], dtype=float),
                   np.array(data["cos_values"], dtype=float), probes)


def gaussian_cos_expectation(mean, cov, probes) -> np.ndarray:
    """``E cos(omega^T theta + b) = exp(-omega^T C omega / 2) cos(omega^T m + b)``."""
    omega, b = _probe_arrays(probes)
    quad = np.einsum("pi,ij,pj->p", omega, np.asarray(cov, dtype=float), omega)
    return np.exp(-0.5 * quad) * np.cos(omega @ np.asarray(mean, dtype=float) + b)


def summary_stats(state: Union[Ensemble, GaussianMoments], probes) -> ReferenceStats:
    """Statistics of an ensemble (empirical, 1/J covariance) or of a Gaussian (exact)."""
    probes = tuple(probes)
    if isinstance(state, GaussianMoments):
        return ReferenceStats(state.mean.copy(), state.cov.copy(),
                              gaussian_cos_expectation(state.mean, state.cov, probes), probes)
    x = state.particles
    mean = x.mean(axis=0)
    d = x - mean
    cov = d.T @ d / x.shape[0]
    omega, b = _probe_arrays(probes)
    cos_values = np.cos(x @ omega.T + b).mean(axis=0)
    return ReferenceStats(mean, 0.5 * (cov + cov.T), cos_values, probes)


def error_report(stats: ReferenceStats, reference: ReferenceStats):
    """``(mean_err, cov_rel_err, cos_err)``: L2 mean error, relative Frobenius
    covariance error and the mean absolute cosine error over probes."""
    if stats.mean.shape != reference.mean.shape:
        raise DimensionError("statistics have different dimensions")
    if len(stats.cos_values) != len(reference.cos_values):
        raise ValueError("statistics were computed with different numbers of probes")
    if stats.probes is not None and reference.probes is not None:
        if tuple(stats.probes) != tuple(reference.probes):
            raise ValueError("statistics were computed with different probes")
    mean_err = float(np.linalg.norm(stats.mean - reference.mean))
    cov_err = float(np.linalg.norm(stats.cov - reference.cov) / np.linalg.norm(reference.cov))
    cos_err = float(np.mean(np.abs(np.asarray(stats.cos_values) - reference.cos_values)))
    return mean_err, cov_err, cos_err


# ---------------------------------------------------------------------------
# Reference integrals


@dataclass(frozen=True)
class IntegrationConfig:
    """Midpoint rule for the outer 1D integral.

    Attributes:
        n_points: Number of uniform midpoints.
        interval: Truncation interval; defaults per target kind.
        chunk: Points processed per vectorized block.
    """

    n_points: int = 10_000_000
    interval: Optional[Tuple[float, float]] = None
    chunk: int = 1_000_000


def _midpoint_sums(lo, hi, n, chunk, log_weight, integrands):
    """Sums of ``w(x) f_k(x)`` over midpoints, with ``w`` shifted by its maximum."""
    h = (hi - lo) / n
    # peak of the weight, needed for stable exponentials and the tail check
    probe = lo + (np.arange(0, n, max(1, n // 100_000)) + 0.5) * h
    shift = float(np.max(log_weight(probe)))
    totals = None
    for start in range(0, n, chunk):
        x = lo + (np.arange(start, min(n, start + chunk)) + 0.5) * h
        w = np.exp(log_weight(x) - shift)
        part = np.array([np.dot(w, f(x)) for f in integrands] + [w.sum()])
        totals = part if totals is None else totals + part
    edge = max(log_weight(np.array([lo + 0.5 * h]))[0], log_weight(np.array([hi - 0.5 * h]))[0])
    if edge - shift > math.log(TAIL_TOLERANCE):
        raise TruncationError(
            f"integrand at the truncation boundary is {math.exp(edge - shift):.3g} of its peak"
        )
    return totals[:-1] / totals[-1]


def _rosenbrock_reference(lam, probes, cfg):
    # theta2 | theta1 ~ N(theta1^2, 10/lam); theta1 ~ N(1, 10)
    v = 10.0 / lam
    omega, b = _probe_arrays(probes)
    fs = [
        lambda x: x,
        lambda x: x**2,
        lambda x: x**3,
        lambda x: x**4 + v,
    ]
    for (w1, w2), bb in zip(omega, b):
        damp = math.exp(-0.5 * w2 * w2 * v)
        fs.append(lambda x, w1=w1, w2=w2, bb=bb, damp=damp: damp * np.cos(w2 * x * x + w1 * x + bb))
    lo, hi = cfg.interval or DEFAULT_INTERVALS["rosenbrock"]
    vals = _midpoint_sums(lo, hi, cfg.n_points, cfg.chunk,
                          lambda x: -((1.0 - x) ** 2) / 20.0, fs)
    e1, e11, e111, e22 = vals[:4]
    mean = np.array([e1, e11])
    cov = np.array([[e11 - e1 * e1, e111 - e1 * e11], [e111 - e1 * e11, e22 - e11 * e11]])
    return mean, cov, vals[4:]


def _logconcave_reference(lam, probes, cfg):
    # theta1 | theta2 ~ N(theta2 / sqrt(lam), 10/lam); theta2 has weight exp(-theta2^4 / 20)
    s = math.sqrt(lam)
    v = 10.0 / lam
    omega, b = _probe_arrays(probes)
    fs = [lambda x: x, lambda x: x**2]
    for (w1, w2), bb in zip(omega, b):
        damp = math.exp(-0.5 * w1 * w1 * v)
        fs.append(lambda x, w1=w1, w2=w2, bb=bb, damp=damp: damp * np.cos((w1 / s + w2) * x + bb))
    lo, hi = cfg.interval or DEFAULT_INTERVALS["logconcave"]
    vals = _midpoint_sums(lo, hi, cfg.n_points, cfg.chunk, lambda x: -(x**4) / 20.0, fs)
    m2, q2 = vals[:2]
    mean = np.array([m2 / s, m2])
    e11 = q2 / lam + v
    e12 = q2 / s
    cov = np.array([[e11 - mean[0] ** 2, e12 - mean[0] * m2], [e12 - mean[0] * m2, q2 - m2 * m2]])
    return mean, cov, vals[2:]


def reference_statistics(target: TargetModel, probes: Sequence[CosProbe],
                         integration_cfg: Optional[IntegrationConfig] = None) -> ReferenceStats:
    """Ground-truth statistics for the gaussian, logconcave and rosenbrock kinds."""
    probes = tuple(probes)
    if any(len(p.omega) != target.dim for p in probes):
        raise DimensionError("probe dimension does not match the target")
    cfg = integration_cfg or IntegrationConfig()
    if target.kind == "gaussian":
        m, C = target.params["mean"], target.params["cov"]
        return ReferenceStats(m.copy(), C.copy(), gaussian_cos_expectation(m, C, probes), probes)
    if target.kind == "rosenbrock":
        mean, cov, cos_values = _rosenbrock_reference(target.params["lambda"], probes, cfg)
    elif target.kind == "logconcave":
        mean, cov, cos_values = _logconcave_reference(target.params["lambda"], probes, cfg)
    else:
        raise ValueError(f"no reference statistics for target kind {target.kind!r}")
    return ReferenceStats(mean, 0.5 * (cov + cov.T), np.asarray(cos_values), probes)


def rosenbrock_closed_form(lam: float):
    """Printed moments of the Rosenbrock benchmark."""
    return np.array([1.0, 11.0]), np.array([[10.0, 20.0], [20.0, 10.0 / lam + 240.0]])


def cache_dir(override=None) -> Path:
    if override is not None:
        return Path(override)
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "flowsampler"


def _cache_key(target, probe_seed, n_probes, cfg):
    lam = target.params.get("lambda")
    lo, hi = cfg.interval or DEFAULT_INTERVALS.get(target.kind, (0.0, 0.0))
    return (f"{target.kind}_lam{lam!r}_probes{probe_seed}x{n_probes}"
            f"_n{cfg.n_points}_{lo!r}_{hi!r}.json")


def cached_reference(target: TargetModel, probe_seed: int, integration_cfg=None,
                     n_probes: int = N_PROBES, directory=None) -> ReferenceStats:
    """:func:`reference_statistics` for probes drawn from ``probe_seed``, cached as JSON.

    Gaussian references are cheap and never cached.  The cache directory is
    ``directory``, else ``$FLOWSAMPLER_CACHE``, else ``~/.cache/flowsampler``.
    """
    probes = draw_probes(probe_seed, target.dim, n_probes)
    cfg = integration_cfg or IntegrationConfig()
    if target.kind == "gaussian":
        return reference_statistics(target, probes, cfg)
    path = cache_dir(directory) / _cache_key(target, probe_seed, n_probes, cfg)
    if path.exists():
        stats = ReferenceStats.from_json(json.loads(path.read_text()))
        if stats.probes == probes:
            return stats
    stats = reference_statistics(target, probes, cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(stats.to_json(), indent=1))
    os.replace(tmp, path)
    return stats


# ---------------------------------------------------------------------------
# Rate fitting


def fit_log_slope(t, y, t_min=None, t_max=None) -> float:
    """Least-squares slope of ``log y`` against ``t`` over ``[t_min, t_max]``."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    sel = np.ones(t.shape, dtype=bool)
    if t_min is not None:
        sel &= t >= t_min
    if t_max is not None:
        sel &= t <= t_max
    sel &= y > 0
    if sel.sum() < 2:
        raise ValueError("need at least two positive points in the fitting window")
    return float(np.polyfit(t[sel], np.log(y[sel]), 1)[0])


def fit_loglog_slope(t, y, t_min=None, t_max=None) -> float:
    """Least-squares slope of ``log y`` against ``log t``."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    sel = (t > 0) & (y > 0)
    if t_min is not None:
        sel &= t >= t_min
    if t_max is not None:
        sel &= t <= t_max
    if sel.sum() < 2:
        raise ValueError("need at least two positive points in the fitting window")
    return float(np.polyfit(np.log(t[sel]), np.log(y[sel]), 1)[0])
