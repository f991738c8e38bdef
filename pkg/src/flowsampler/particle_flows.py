"""Interacting-particle realizations of the Wasserstein and Stein gradient flows.

Four dynamics are available:

* ``langevin``     d theta = grad log rho dt + sqrt(2) dW
* ``ai_langevin``  d theta = C grad log rho dt + sqrt(2 C) dW, C the ensemble covariance
* ``svgd``         Stein flow with the median-bandwidth Gaussian kernel
* ``ai_svgd``      Stein flow preconditioned by C with the covariance Gaussian kernel

Stochastic flows use Euler-Maruyama, deterministic ones forward Euler.  Noise
for step ``k`` is drawn from a stream spawned from ``seed`` with key ``k``, so a
trajectory depends only on the seed and the step index.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import DegenerateEnsembleError, DivergenceError, KernelError, SPDError
from .gaussian_flows import GaussianMoments
from .targets import TargetModel

FLOWS = ("langevin", "ai_langevin", "svgd", "ai_svgd")
KERNEL_FAMILIES = ("median_gaussian", "covariance_gaussian")
# relative pivot floor below which an ensemble covariance counts as singular
RANK_TOL = 1e-13

DEFAULT_KERNEL = {"svgd": "median_gaussian", "ai_svgd": "covariance_gaussian"}


@dataclass(frozen=True, eq=False)
class Ensemble:
    particles: np.ndarray

    def __post_init__(self):
        p = np.atleast_2d(np.array(self.particles, dtype=float))
        if p.shape[0] < 1:
            raise DegenerateEnsembleError("an ensemble needs at least one particle")
        if not np.all(np.isfinite(p)):
            raise DivergenceError("ensemble has non-finite entries",
                                  index=int(np.argwhere(~np.isfinite(p))[0, 0]))
        p.flags.writeable = False
        object.__setattr__(self, "particles", p)

    @property
    def J(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"theta_{i + 1}" for i in range(self.dim)])
            for row in self.particles:
                writer.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family; ``scale`` overrides the normalizing constant when given."""

    family: str
    scale: Optional[float] = None

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")

    def scaling_constant(self, J: int, dim: int) -> float:
        if self.scale is not None:
            return float(self.scale)
        if self.family == "median_gaussian":
            return (1.0 + 4.0 * math.log(J + 1) / dim) ** (dim / 2.0)
        return 3.0 ** (dim / 2.0)


@dataclass(frozen=True)
class SdeConfig:
    dt: float = 0.01
    steps: int = 1500
    seed: int = 0
    flow: str = "langevin"

    def __post_init__(self):
        if self.flow not in FLOWS:
            raise ValueError(f"unknown particle flow {self.flow!r}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def horizon(self) -> float:
        return self.dt * self.steps


def empirical_moments(e: Ensemble) -> GaussianMoments:
    """Ensemble mean and 1/J-normalized covariance.

    Raises :class:`DegenerateEnsembleError` when the covariance is not SPD
    (including ``J < 2``).
    """
    mean, cov = _mean_cov(e.particles)
    try:
        return GaussianMoments(mean, cov)
    except SPDError as exc:
        raise DegenerateEnsembleError(f"ensemble covariance is singular (J={e.J})") from exc


def _mean_cov(x):
    if x.shape[0] < 2:
        raise DegenerateEnsembleError("covariance needs at least two particles")
    mean = x.mean(axis=0)
    d = x - mean
    cov = d.T @ d / x.shape[0]
    return mean, 0.5 * (cov + cov.T)


def _pair_sq(x):
    """Condensed squared distances over unordered distinct pairs."""
    return pdist(x, "sqeuclidean")


def _lower_median(pairs):
    k = (pairs.size - 1) // 2
    return float(np.partition(pairs, k)[k])


def _median_sq_distance(x):
    if x.shape[0] < 2:
        raise KernelError("median bandwidth needs at least two particles")
    return _lower_median(_pair_sq(x))


def _gaussian_gram(pairs, factor, scale):
    pairs *= factor
    np.exp(pairs, out=pairs)
    K = squareform(pairs)
    np.fill_diagonal(K, 1.0)
    K *= scale
    return K


def median_bandwidth(e: Ensemble) -> float:
    """``h = med^2 / log(J + 1)`` over distinct unordered pairs (lower median)."""
    h = _median_sq_distance(e.particles) / math.log(e.J + 1)
    if h <= 0.0:
        raise KernelError("all particles coincide: median bandwidth is zero")
    return h


def spd_sqrt(C) -> np.ndarray:
    """Symmetric square root via eigendecomposition."""
    C = np.asarray(C, dtype=float)
    if not np.allclose(C, C.T, rtol=0, atol=1e-12 * max(1.0, np.abs(C).max())):
        raise SPDError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (C + C.T))
    if vals.min() <= 0.0:
        raise SPDError("matrix is not positive definite")
    S = (vecs * np.sqrt(vals)) @ vecs.T
    return 0.5 * (S + S.T)


def _spd_cov(x):
    mean, cov = _mean_cov(x)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SPDError(f"ensemble covariance is singular (J={x.shape[0]})") from exc
    d = np.diag(L)
    if (d.min() / d.max()) ** 2 < RANK_TOL:
        raise SPDError(f"ensemble covariance is numerically singular (J={x.shape[0]})")
    return mean, cov, L


def kernel_matrix(x, kernel: KernelSpec, cov=None, h=None):
    """Kernel matrix ``k(theta_i, theta_j)`` for the ensemble ``x`` (shape ``(J, N)``)."""
    J, N = x.shape
    scale = kernel.scaling_constant(J, N)
    if kernel.family == "median_gaussian":
        if J < 2:
            # a lone particle feels no repulsion; the bandwidth is irrelevant
            return np.full((1, 1), scale), 1.0
        pairs = _pair_sq(x)
        if h is None:
            h = _lower_median(pairs) / math.log(J + 1)
        if h <= 0.0:
            raise KernelError("all particles coincide: median bandwidth is zero")
        return _gaussian_gram(pairs, -1.0 / h, scale), h
    if cov is None:
        _, cov, L = _spd_cov(x)
    else:
        L = np.linalg.cholesky(cov)
    white = np.linalg.solve(L, x.T).T
    return _gaussian_gram(_pair_sq(white), -0.5, scale), cov


def drift(x, target: TargetModel, flow: str, kernel: Optional[KernelSpec] = None):
    """Deterministic part of the particle velocity for every particle."""
    J, N = x.shape
    grads = -target.grad_phi(x)
    if flow == "langevin":
        return grads
    if flow == "ai_langevin":
        _, cov, _ = _spd_cov(x)
        return grads @ cov
    if kernel is None:
        kernel = KernelSpec(DEFAULT_KERNEL[flow])
    if flow == "svgd":
        if kernel.family != "median_gaussian":
            K, cov = kernel_matrix(x, kernel)
            # grad_{theta_j} k(theta_i, theta_j) = k C^{-1} (theta_i - theta_j)
            rep = np.linalg.solve(cov, (x * K.sum(axis=1)[:, None] - K @ x).T).T
            return (K @ grads + rep) / J
        K, h = kernel_matrix(x, kernel)
        # grad_{theta_j} k(theta_i, theta_j) = (2 / h) k (theta_i - theta_j)
        rep = (2.0 / h) * (x * K.sum(axis=1)[:, None] - K @ x)
        return (K @ grads + rep) / J
    if flow == "ai_svgd":
        _, cov, _ = _spd_cov(x)
        if kernel.family == "covariance_gaussian":
            K, _ = kernel_matrix(x, kernel, cov=cov)
            # C grad_{theta_j} k(theta_i, theta_j) = k (theta_i - theta_j)
            rep = x * K.sum(axis=1)[:, None] - K @ x
        else:
            K, h = kernel_matrix(x, kernel)
            rep = (2.0 / h) * (x * K.sum(axis=1)[:, None] - K @ x) @ cov
        return (K @ grads @ cov + rep) / J
    raise ValueError(f"unknown particle flow {flow!r}")


def step_noise(seed: int, step: int, J: int, N: int) -> np.ndarray:
    """Standard normal increments for step ``step``; row ``j`` belongs to particle ``j``.

    The stream is spawned from ``seed`` with ``step`` as its key, so it never
    coincides with ``default_rng(seed)`` used for initial draws.
    """
    seq = np.random.SeedSequence(int(seed), spawn_key=(int(step),))
    return np.random.default_rng(seq).standard_normal((J, N))


def flow_step(e: Ensemble, target: TargetModel, cfg: SdeConfig,
              kernel: Optional[KernelSpec] = None, step: int = 0) -> Ensemble:
    """Advance the ensemble by one step of size ``cfg.dt``; ``step`` indexes the noise stream."""
    x = e.particles
    if cfg.flow in ("ai_langevin", "ai_svgd") and e.J < e.dim + 1:
        raise DegenerateEnsembleError(f"{cfg.flow} needs J >= dim + 1 particles")
    with np.errstate(over="ignore", invalid="ignore"):
        v = drift(x, target, cfg.flow, kernel)
        new = x + cfg.dt * v
        if cfg.flow == "langevin":
            new = new + math.sqrt(2.0 * cfg.dt) * step_noise(cfg.seed, step, e.J, e.dim)
        elif cfg.flow == "ai_langevin":
            _, cov = _mean_cov(x)
            root = spd_sqrt(cov)
            new = new + math.sqrt(2.0 * cfg.dt) * step_noise(cfg.seed, step, e.J, e.dim) @ root
    bad = ~np.all(np.isfinite(new), axis=1)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise DivergenceError(f"{cfg.flow} update diverged at particle {idx}", index=idx)
    return Ensemble(new)


def run_particle_flow(e0: Ensemble, target: TargetModel, cfg: SdeConfig,
                      kernel: Optional[KernelSpec] = None, record_every: int = 1,
                      callback=None):
    """Run ``cfg.steps`` steps; returns the list of ``(t, Ensemble)`` snapshots.

    ``callback(t, ensemble)`` is invoked at every snapshot instead of storing it
    when given, in which case an empty list is returned.
    """
    snaps = []
    e = e0

    def emit(k, ens):
        t = k * cfg.dt
        if callback is not None:
            callback(t, ens)
        else:
            snaps.append((t, ens))

    emit(0, e)
    for k in range(cfg.steps):
        e = flow_step(e, target, cfg, kernel, step=k)
        if (k + 1) % record_every == 0 or k + 1 == cfg.steps:
            emit(k + 1, e)
    return snaps


def kernel_normalization_check(kernel: KernelSpec, g: GaussianMoments, samples: int = 100_000,
                               seed: int = 0, J: int = 1000):
    """Monte-Carlo estimate of ``E[k(theta, theta')]`` for independent ``theta, theta' ~ g``.

    For ``median_gaussian`` the bandwidth matrix ``med^2 I`` is replaced by
    ``dim * C`` so the kernel reads ``exp(-log(J+1)/dim (d^T C^{-1} d))``.
    Returns ``(estimate, standard_error)``.
    """
    if samples < 1000:
        raise ValueError("use at least 1000 samples")
    rng = np.random.default_rng(seed)
    L = np.linalg.cholesky(g.cov)
    a = g.mean + rng.standard_normal((samples, g.dim)) @ L.T
    b = g.mean + rng.standard_normal((samples, g.dim)) @ L.T
    d = np.linalg.solve(L, (a - b).T).T
    maha = np.einsum("ij,ij->i", d, d)
    scale = kernel.scaling_constant(J, g.dim)
    if kernel.family == "covariance_gaussian":
        vals = scale * np.exp(-0.5 * maha)
    else:
        vals = scale * np.exp(-math.log(J + 1) / g.dim * maha)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples))


def sample_ensemble(mean, cov, J: int, seed: int) -> Ensemble:
    """``J`` i.i.d. draws from ``N(mean, cov)``."""
    rng = np.random.default_rng(seed)
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    L = np.linalg.cholesky(np.atleast_2d(np.asarray(cov, dtype=float)))
    return Ensemble(mean + rng.standard_normal((J, mean.shape[0])) @ L.T)
