"""Closed-form Fisher-Rao density flow on uniform grids.

The KL gradient flow under the Fisher-Rao metric is a geometric interpolation,

    rho_t  ~  rho_0^(e^-t) * rho_post^(1 - e^-t),

so no PDE time-stepping is needed: every evaluation is a pointwise combination
of log densities followed by a Riemann-sum normalization.  Grids use cell
centres, which makes the Riemann sum a midpoint rule.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionError, TruncationError
from .targets import TargetModel

DEFAULT_POINTS = 4096
DEFAULT_HALF_WIDTH = 12.0
BOUNDARY_REL_DENSITY = 1e-12
BOUNDARY_REL_MASS = 1e-6


class TruncationWarning(UserWarning):
    """Density at the grid boundary is not negligible relative to its peak."""


@dataclass(frozen=True)
class GridAxis:
    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("grid axis needs hi > lo")
        if self.n < 2:
            raise ValueError("grid axis needs at least two cells")

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / self.n

    def centres(self) -> np.ndarray:
        return self.lo + (np.arange(self.n) + 0.5) * self.step


@dataclass(frozen=True, eq=False)
class DensityGrid:
    """A normalized density tabulated at the cell centres of a uniform grid.

    Attributes:
        axes: One :class:`GridAxis` per dimension.
        log_values: Log density at each cell centre, normalized so that
            ``sum(exp(log_values)) * cell_volume == 1``.
    """

    axes: Tuple[GridAxis, ...]
    log_values: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self):
        return tuple(a.n for a in self.axes)

    @property
    def cell_volume(self) -> float:
        return math.prod(a.step for a in self.axes)

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_values)

    def points(self) -> np.ndarray:
        """Cell centres with shape ``shape + (dim,)``."""
        mesh = np.meshgrid(*[a.centres() for a in self.axes], indexing="ij")
        return np.stack(mesh, axis=-1)

    def same_grid(self, other: "DensityGrid") -> bool:
        return self.axes == other.axes

    def moment2(self) -> float:
        """``E|theta|^2`` by the midpoint rule."""
        sq = np.sum(self.points() ** 2, axis=-1)
        return float(np.sum(self.values * sq) * self.cell_volume)


def make_axes(lo: Sequence[float], hi: Sequence[float], n: Union[int, Sequence[int]]):
    lo = np.atleast_1d(lo)
    hi = np.atleast_1d(hi)
    ns = [int(n)] * len(lo) if np.ndim(n) == 0 else [int(k) for k in n]
    return tuple(GridAxis(float(a), float(b), k) for a, b, k in zip(lo, hi, ns))


def default_axes(mean0, cov0, mean1, cov1, n: int = DEFAULT_POINTS,
                 half_width: float = DEFAULT_HALF_WIDTH):
    """``[m - 12 sigma, m + 12 sigma]`` per axis, taken from the wider endpoint density."""
    mean0, mean1 = np.atleast_1d(mean0).astype(float), np.atleast_1d(mean1).astype(float)
    sd0 = np.sqrt(np.diag(np.atleast_2d(cov0)))
    sd1 = np.sqrt(np.diag(np.atleast_2d(cov1)))
    wide0 = sd0 >= sd1
    m = np.where(wide0, mean0, mean1)
    s = np.where(wide0, sd0, sd1)
    return make_axes(m - half_width * s, m + half_width * s, n)


def _normalize(axes, log_unnorm) -> DensityGrid:
    vol = math.prod(a.step for a in axes)
    log_unnorm = np.asarray(log_unnorm, dtype=float)
    if np.any(np.isnan(log_unnorm)) or np.any(log_unnorm == np.inf):
        raise ValueError("log density has NaN or +inf entries")
    log_z = logsumexp(log_unnorm) + math.log(vol)
    if not np.isfinite(log_z):
        raise ValueError("density vanishes on the whole grid")
    return DensityGrid(tuple(axes), log_unnorm - log_z)


def _boundary_mask(shape):
    mask = np.zeros(shape, dtype=bool)
    for d in range(len(shape)):
        idx = [slice(None)] * len(shape)
        idx[d] = 0
        mask[tuple(idx)] = True
        idx[d] = -1
        mask[tuple(idx)] = True
    return mask


def check_truncation(rho: DensityGrid, what: str = "density"):
    """Warn when boundary density exceeds 1e-12 of the peak; raise above 1e-6 boundary mass."""
    lv = rho.log_values
    mask = _boundary_mask(lv.shape)
    peak = lv.max()
    edge = lv[mask].max()
    if edge - peak <= math.log(BOUNDARY_REL_DENSITY):
        return
    mass = float(np.exp(lv[mask]).sum() * rho.cell_volume)
    if mass > BOUNDARY_REL_MASS:
        raise TruncationError(f"{what} has boundary mass {mass:.3g} > {BOUNDARY_REL_MASS:g}")
    warnings.warn(f"{what} is not negligible at the grid boundary "
                  f"(relative density {math.exp(edge - peak):.3g})", TruncationWarning,
                  stacklevel=3)


def from_log_density(axes, log_fn, check: bool = True) -> DensityGrid:
    """Tabulate and normalize ``exp(log_fn(points))`` on the grid."""
    axes = tuple(axes)
    mesh = np.stack(np.meshgrid(*[a.centres() for a in axes], indexing="ij"), axis=-1)
    rho = _normalize(axes, log_fn(mesh))
    if check:
        check_truncation(rho)
    return rho


def gaussian_grid(axes, mean, cov, check: bool = True) -> DensityGrid:
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    prec = np.linalg.inv(np.atleast_2d(np.asarray(cov, dtype=float)))

    def log_fn(x):
        d = x - mean
        return -0.5 * np.einsum("...i,ij,...j->...", d, prec, d)

    return from_log_density(axes, log_fn, check)


def target_grid(axes, target: TargetModel, check: bool = True) -> DensityGrid:
    """The target, normalized on the grid by its Riemann sum."""
    if target.dim != len(tuple(axes)):
        raise DimensionError(f"target has dim {target.dim}, grid has {len(tuple(axes))}")
    return from_log_density(axes, target.log_density_unnorm, check)


def fr_density(rho0: DensityGrid, target: TargetModel, t: float, check: bool = True) -> DensityGrid:
    """Fisher-Rao flow at time ``t`` started from ``rho0``.

    ``log rho_t = e^-t log rho_0 - (1 - e^-t) Phi`` up to the constant
    ``log Z_t``, which is realized by the Riemann-sum normalization.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if target.dim != rho0.dim:
        raise DimensionError(f"target has dim {target.dim}, grid has {rho0.dim}")
    a = math.exp(-t)
    log_post = target.log_density_unnorm(rho0.points())
    # zero-weight terms must stay zero even where the other density vanishes
    with np.errstate(invalid="ignore"):
        first = rho0.log_values * a if a > 0.0 else 0.0
        second = log_post * (1.0 - a) if a < 1.0 else 0.0
    rho = _normalize(rho0.axes, first + second)
    if check:
        check_truncation(rho, f"rho_t at t={t:g}")
    return rho


def _kl_terms(log_p, log_q, vol):
    p = np.exp(log_p)
    pos = p > 0.0
    return float(np.sum(p[pos] * (log_p[pos] - log_q[pos])) * vol)


def grid_kl(rho: DensityGrid, target: Union[TargetModel, DensityGrid]) -> float:
    """``KL[rho || target]`` by the midpoint rule, with ``0 log 0 = 0``.

    ``target`` may be a :class:`TargetModel` (normalized on ``rho``'s grid)
    or another :class:`DensityGrid` on the identical grid.
    """
    if isinstance(target, DensityGrid):
        if not rho.same_grid(target):
            raise DimensionError("KL requires both densities on the same grid")
        log_q = target.log_values
    else:
        log_q = target_grid(rho.axes, target, check=False).log_values
    return _kl_terms(rho.log_values, log_q, rho.cell_volume)


@dataclass(frozen=True)
class KLBound:
    K: float
    B: float

    @property
    def prefactor(self) -> float:
        return (2.0 + self.B + math.e * self.B) * self.K

    @property
    def t_min(self) -> float:
        return math.log((1.0 + self.B) * self.K)

    def __call__(self, t):
        return self.prefactor * np.exp(-np.asarray(t, dtype=float))


def kl_bound_constants(rho0: DensityGrid, target: TargetModel) -> KLBound:
    """Smallest ``K`` with ``|log(rho_0 / rho_post)| <= K (1 + |theta|^2)`` on the grid,
    and ``B = max(E_rho0 |theta|^2, E_post |theta|^2)``.
    """
    post = target_grid(rho0.axes, target, check=False)
    pts = rho0.points()
    envelope = 1.0 + np.sum(pts**2, axis=-1)
    ratio = np.abs(rho0.log_values - post.log_values) / envelope
    K = float(np.max(ratio[np.isfinite(ratio)]))
    B = max(rho0.moment2(), post.moment2())
    return KLBound(K, B)


def kl_curve(rho0: DensityGrid, target: TargetModel, times) -> np.ndarray:
    """Rows ``(t, kl, bound)``; ``bound`` is NaN before the bound's validity time."""
    bound = kl_bound_constants(rho0, target)
    post = target_grid(rho0.axes, target, check=False)
    rows = []
    for t in np.asarray(times, dtype=float):
        kl = grid_kl(fr_density(rho0, target, float(t)), post)
        b = float(bound(t)) if t >= bound.t_min else float("nan")
        rows.append((float(t), kl, b))
    return np.array(rows)


def write_kl_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "kl", "bound"])
        for t, kl, b in rows:
            writer.writerow([repr(float(t)), repr(float(kl)), repr(float(b))])


def gaussian_interpolation_kl(var0: float, var_post: float, t: float) -> float:
    """Closed-form KL of the 1D centred Gaussian interpolation to ``N(0, var_post)``."""
    a = math.exp(-t)
    var_t = 1.0 / (a / var0 + (1.0 - a) / var_post)
    r = var_t / var_post
    return 0.5 * (r - 1.0 - math.log(r))
