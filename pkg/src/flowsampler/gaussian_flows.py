"""Gaussian moment-closure flows on (m, C).

Each flow is an explicit right-hand side driven by two Gaussian expectations,
``E[grad log rho]`` and ``H = E[Hess log rho]``, evaluated with a quadrature
rule built from the current moments:

==================  ==========================  ====================================
kind                dm/dt                        dC/dt
==================  ==========================  ====================================
fisher_rao          C E[grad]                    C + C H C
wasserstein         E[grad]                      2I + H C + C H
kalman_wasserstein  C E[grad]                    2C + 2 C H C
stein_bilinear      b P E[grad]                  P A C + C A P + P H C A C + C A C H P
galy                E[grad]                      2C + H C^2 + C^2 H
vanilla             E[grad]                      C^{-1}/2 + H/2
==================  ==========================  ====================================
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg.lapack import dpotrf

from .errors import (
    DimensionError,
    IntegrationError,
    PreconditionError,
    SPDError,
    UnsupportedOperationError,
)
from .targets import TargetModel

HESSIAN_MODES = ("analytic", "stein_gradient")


def _cholesky(C):
    L, info = dpotrf(C, lower=1, clean=1)
    if info != 0:
        raise SPDError("covariance is not positive definite")
    return L


@dataclass(frozen=True, eq=False)
class GaussianMoments:
    """Mean and SPD covariance of a Gaussian ``N(mean, cov)``."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        n = mean.shape[0]
        if cov.shape != (n, n):
            raise DimensionError(f"covariance shape {cov.shape} does not match mean length {n}")
        scale = max(1.0, float(np.abs(cov).max()))
        if np.abs(cov - cov.T).max() > 1e-12 * scale:
            raise SPDError("covariance is not symmetric")
        _cholesky(cov)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Weighted points approximating expectations under a Gaussian."""

    points: np.ndarray
    weights: np.ndarray

    def expect(self, values):
        """Weighted sum over the leading (point) axis of ``values``."""
        return np.tensordot(self.weights, values, axes=(0, 0))

    def affine_map(self, A, b) -> "QuadratureRule":
        """The same rule pushed through ``theta -> A theta + b``."""
        A = np.atleast_2d(A)
        return QuadratureRule(self.points @ A.T + np.asarray(b, dtype=float), self.weights)


def default_kappa(dim: int) -> float:
    return 3.0 - dim


def _unscented(mean, cov, kappa):
    n = mean.shape[0]
    if n + kappa <= 0:
        raise ValueError(f"unscented rule needs dim + kappa > 0, got {n + kappa}")
    offsets, weights = _unscented_template(n, kappa)
    return mean + offsets @ _cholesky(cov).T, weights


@functools.lru_cache(maxsize=64)
def _unscented_template(n, kappa):
    """Standardized sigma offsets ``0, +-sqrt(n + kappa) e_i`` and their weights."""
    eye = np.eye(n)
    offsets = math.sqrt(n + kappa) * np.vstack([np.zeros(n), eye, -eye])
    weights = np.full(2 * n + 1, 1.0 / (2.0 * (n + kappa)))
    weights[0] = kappa / (n + kappa)
    offsets.flags.writeable = False
    weights.flags.writeable = False
    return offsets, weights


def unscented_rule(g: GaussianMoments, kappa: Optional[float] = None) -> QuadratureRule:
    """Sigma points ``m, m +- sqrt(n + kappa) L e_i`` with ``L L^T = C``.

    Exact for polynomials of total degree <= 3 under ``N(m, C)``.  With the
    default ``kappa = 3 - n`` the axis-aligned fourth moments are exact too.
    """
    if kappa is None:
        kappa = default_kappa(g.dim)
    return QuadratureRule(*_unscented(g.mean, g.cov, kappa))


@functools.lru_cache(maxsize=16)
def _hermite_template(order, n):
    """Standardized tensor Gauss-Hermite nodes and weights for ``N(0, I_n)``."""
    x, w = np.polynomial.hermite_e.hermegauss(order)
    w = w / math.sqrt(2.0 * math.pi)
    std = np.stack([g.ravel() for g in np.meshgrid(*([x] * n), indexing="ij")], axis=-1)
    weights = np.prod(np.stack([g.ravel() for g in np.meshgrid(*([w] * n), indexing="ij")],
                               axis=-1), axis=-1)
    std.flags.writeable = False
    weights.flags.writeable = False
    return std, weights


def _gauss_hermite(mean, cov, order):
    std, weights = _hermite_template(order, mean.shape[0])
    return mean + std @ _cholesky(cov).T, weights


def gauss_hermite_rule(g: GaussianMoments, order: int = 20) -> QuadratureRule:
    """Tensor-product Gauss-Hermite rule with ``order`` nodes per axis."""
    return QuadratureRule(*_gauss_hermite(g.mean, g.cov, order))


def _resolve_mode(target, hessian_mode):
    if hessian_mode is None:
        return "analytic" if target.has_hessian else "stein_gradient"
    if hessian_mode not in HESSIAN_MODES:
        raise ValueError(f"unknown hessian_mode {hessian_mode!r}")
    if hessian_mode == "analytic" and not target.has_hessian:
        raise UnsupportedOperationError(
            f"{target.kind} target has no Hessian; use hessian_mode='stein_gradient'"
        )
    return hessian_mode


def _expectations(mean, cov, target, points, weights, mode):
    grads = -target.grad_phi(points)
    grad_mean = weights @ grads
    if mode == "analytic":
        hess = target.hess_phi(points)
        return grad_mean, -(weights @ hess.reshape(len(weights), -1)).reshape(hess.shape[1:])
    # E[grad (theta - m)^T] C^{-1}, symmetrized against quadrature asymmetry
    cross = (grads * weights[:, None]).T @ (points - mean)
    hess_mean = np.linalg.solve(cov, cross.T).T
    return grad_mean, 0.5 * (hess_mean + hess_mean.T)


def gaussian_expectations(g: GaussianMoments, target: TargetModel, rule: QuadratureRule,
                          hessian_mode: Optional[str] = None):
    """Quadrature estimates of ``E[grad log rho]`` and ``E[Hess log rho]`` under ``g``.

    ``stein_gradient`` mode only uses gradients, via
    ``E[Hess log rho] = E[grad log rho (theta - m)^T] C^{-1}``.
    """
    if target.dim != g.dim:
        raise DimensionError(f"target dim {target.dim} != moments dim {g.dim}")
    mode = _resolve_mode(target, hessian_mode)
    return _expectations(g.mean, g.cov, target, rule.points, rule.weights, mode)


@dataclass(frozen=True)
class MomentFlowKind:
    """Which moment flow to run.

    ``A_fn(mean, cov)`` and ``b_fn(mean, cov)`` give the bilinear kernel
    ``(theta - m)^T A (theta' - m) + b`` of the ``stein_bilinear`` kind, whose
    constant-in-theta preconditioner is ``C`` or ``I``.
    """

    name: str
    A_fn: Optional[Callable] = None
    b_fn: Optional[Callable] = None
    preconditioner: str = "C"

    def __post_init__(self):
        if self.name not in FLOW_NAMES:
            raise ValueError(f"unknown moment flow {self.name!r}")
        if self.name == "stein_bilinear" and (self.A_fn is None or self.b_fn is None):
            raise ValueError("stein_bilinear needs A_fn and b_fn")
        if self.preconditioner not in ("C", "I"):
            raise ValueError("preconditioner must be 'C' or 'I'")


FLOW_NAMES = ("fisher_rao", "wasserstein", "kalman_wasserstein", "stein_bilinear", "galy", "vanilla")

FISHER_RAO = MomentFlowKind("fisher_rao")
WASSERSTEIN = MomentFlowKind("wasserstein")
KALMAN_WASSERSTEIN = MomentFlowKind("kalman_wasserstein")
GALY = MomentFlowKind("galy")
VANILLA = MomentFlowKind("vanilla")


def stein_bilinear(A_fn, b_fn, preconditioner="C") -> MomentFlowKind:
    return MomentFlowKind("stein_bilinear", A_fn, b_fn, preconditioner)


def flow_kind(name: str) -> MomentFlowKind:
    kinds = {k.name: k for k in (FISHER_RAO, WASSERSTEIN, KALMAN_WASSERSTEIN, GALY, VANILLA)}
    try:
        return kinds[name]
    except KeyError:
        raise ValueError(f"unknown moment flow {name!r}") from None


def _rhs_from_expectations(kind, mean, cov, grad_mean, H):
    name = kind.name
    C = cov
    if name == "fisher_rao":
        dm = C @ grad_mean
        dC = C + C @ H @ C
    elif name == "wasserstein":
        dm = grad_mean
        HC = H @ C
        dC = 2.0 * np.eye(C.shape[0]) + HC + HC.T
    elif name == "kalman_wasserstein":
        dm = C @ grad_mean
        dC = 2.0 * C + 2.0 * C @ H @ C
    elif name == "galy":
        dm = grad_mean
        HC2 = H @ C @ C
        dC = 2.0 * C + HC2 + HC2.T
    elif name == "vanilla":
        dm = grad_mean
        dC = 0.5 * np.linalg.inv(C) + 0.5 * H
    else:
        A = np.atleast_2d(kind.A_fn(mean, cov))
        b = float(kind.b_fn(mean, cov))
        if b == 0.0:
            raise PreconditionError("bilinear kernel needs b != 0")
        if np.linalg.matrix_rank(A) < A.shape[0]:
            raise PreconditionError("bilinear kernel needs a nonsingular A")
        P = C if kind.preconditioner == "C" else np.eye(C.shape[0])
        dm = b * P @ grad_mean
        PAC = P @ A @ C
        PHCAC = P @ H @ C @ A @ C
        dC = PAC + PAC.T + PHCAC + PHCAC.T
    return dm, 0.5 * (dC + dC.T)


def moment_flow_rhs(kind: MomentFlowKind, g: GaussianMoments, target: TargetModel,
                    rule: QuadratureRule, hessian_mode: Optional[str] = None):
    """Return ``(dm/dt, dC/dt)`` at ``g``; ``dC`` is exactly symmetric."""
    grad_mean, H = gaussian_expectations(g, target, rule, hessian_mode)
    return _rhs_from_expectations(kind, g.mean, g.cov, grad_mean, H)


def _rule_builder(quadrature, kappa, gh_order, dim):
    if quadrature == "unscented":
        kappa = default_kappa(dim) if kappa is None else kappa
        return lambda m, C: _unscented(m, C, kappa)
    if quadrature == "gauss_hermite":
        return lambda m, C: _gauss_hermite(m, C, gh_order)
    raise ValueError(f"unknown quadrature {quadrature!r}")


def make_rhs(kind, target, kappa=None, hessian_mode=None, quadrature="unscented", gh_order=20):
    """Array-level RHS ``(m, C) -> (dm, dC)`` rebuilding the rule at every call."""
    mode = _resolve_mode(target, hessian_mode)
    build = _rule_builder(quadrature, kappa, gh_order, target.dim)

    def rhs(m, C):
        points, weights = build(m, C)
        grad_mean, H = _expectations(m, C, target, points, weights, mode)
        return _rhs_from_expectations(kind, m, C, grad_mean, H)

    return rhs


def _packed(rhs, n):
    # RK4 works on the flat state (m, vec C)
    def f(y):
        dm, dC = rhs(y[:n], y[n:].reshape(n, n))
        return np.concatenate((dm, dC.ravel()))

    return f


@dataclass(frozen=True, eq=False)
class MomentTrajectory:
    """Moments recorded on a time grid: ``times (T,)``, ``means (T, n)``, ``covs (T, n, n)``."""

    times: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __len__(self):
        return len(self.times)

    def __getitem__(self, i) -> GaussianMoments:
        return GaussianMoments(self.means[i], self.covs[i])

    def to_csv(self, path):
        """Header ``t,m_1..m_n,c_11,c_12,...,c_nn`` with the full row-major covariance."""
        n = self.means.shape[1]
        header = ["t"] + [f"m_{i + 1}" for i in range(n)]
        header += [f"c_{i + 1}{j + 1}" for i in range(n) for j in range(n)]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for t, m, C in zip(self.times, self.means, self.covs):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in m]
                                + [repr(float(v)) for v in C.ravel()])


def _rk4(f, y, h, n):
    half = 0.5 * h
    k1 = f(y)
    k2 = f(y + half * k1)
    k3 = f(y + half * k2)
    k4 = f(y + h * k3)
    y = y + (h / 6.0) * (k1 + k4 + 2.0 * (k2 + k3))
    C = y[n:].reshape(n, n)
    C[...] = 0.5 * (C + C.T)
    if not math.isfinite(y.sum()):
        raise SPDError("non-finite state")
    _cholesky(C)
    return y


MAX_HALVINGS = 20


def _advance(f, y, h, n, depth=0):
    try:
        return _rk4(f, y, h, n)
    except (SPDError, FloatingPointError):
        if depth >= MAX_HALVINGS:
            raise
        y = _advance(f, y, 0.5 * h, n, depth + 1)
        return _advance(f, y, 0.5 * h, n, depth + 1)


def integrate_moment_flow(kind: MomentFlowKind, g0: GaussianMoments, target: TargetModel,
                          dt: float, t_end: float, kappa: Optional[float] = None,
                          hessian_mode: Optional[str] = None, quadrature: str = "unscented",
                          gh_order: int = 20) -> MomentTrajectory:
    """Classic RK4 on the moment ODE, recording every step of the ``dt`` grid.

    A step whose stages or result leave the SPD cone is redone as two half
    steps, recursively up to 20 halvings; past that an
    :class:`IntegrationError` carries the last accepted state.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    n = g0.dim
    f = _packed(make_rhs(kind, target, kappa, hessian_mode, quadrature, gh_order), n)
    n_steps = int(math.ceil(t_end / dt - 1e-9))
    times = np.minimum(np.arange(n_steps + 1) * dt, t_end)
    if n_steps:
        times[-1] = t_end
    states = np.empty((n_steps + 1, n + n * n))
    y = np.concatenate((g0.mean, g0.cov.ravel()))
    states[0] = y
    with np.errstate(over="raise", invalid="raise"):
        for k in range(n_steps):
            try:
                y = _advance(f, y, times[k + 1] - times[k], n)
            except (SPDError, FloatingPointError) as exc:
                raise IntegrationError(
                    f"{kind.name} flow left the SPD cone at t={times[k]:.6g} after "
                    f"{MAX_HALVINGS} step halvings",
                    last_state=GaussianMoments(y[:n], y[n:].reshape(n, n)),
                    t=float(times[k]),
                ) from exc
            states[k + 1] = y
    means = states[:, :n].copy()
    covs = states[:, n:].reshape(-1, n, n).copy()
    return MomentTrajectory(times, means, covs)


def analytic_fisher_rao_gaussian(m0, C0, m_star, C_star, t: float) -> GaussianMoments:
    """Closed-form Fisher-Rao moment flow towards a Gaussian target ``N(m_star, C_star)``.

    ``C_t^{-1} = C*^{-1} + e^{-t}(C_0^{-1} - C*^{-1})`` and
    ``m_t = m* + e^{-t} C_t C_0^{-1} (m_0 - m*)``.
    """
    m0 = np.atleast_1d(np.asarray(m0, dtype=float))
    m_star = np.atleast_1d(np.asarray(m_star, dtype=float))
    C0 = np.atleast_2d(np.asarray(C0, dtype=float))
    C_star = np.atleast_2d(np.asarray(C_star, dtype=float))
    try:
        P0 = np.linalg.inv(C0)
        P_star = np.linalg.inv(C_star)
        decay = math.exp(-t)
        Pt = P_star + decay * (P0 - P_star)
        Ct = np.linalg.inv(0.5 * (Pt + Pt.T))
    except np.linalg.LinAlgError as exc:
        raise SPDError("singular covariance in closed form") from exc
    Ct = 0.5 * (Ct + Ct.T)
    mt = m_star + decay * Ct @ P0 @ (m0 - m_star)
    return GaussianMoments(mt, Ct)


# ---------------------------------------------------------------------------
# One-dimensional local analysis of the Fisher-Rao moment flow


@dataclass(frozen=True)
class JacobianSpectrum1D:
    """Eigenvalues of the linearized 1D Fisher-Rao moment flow at its fixed point."""

    A1: float
    A2: float
    lambda1: float
    lambda2: float
    C_star: float


def spectrum_from_moments(A1: float, A2: float, C_star: float) -> JacobianSpectrum1D:
    """Closed-form eigenvalues given ``A1 = E[Phi''(theta) (theta - m*)]`` and
    ``A2 = E[Phi''(theta) (theta - m*)^2]`` under ``N(m*, C*)``.
    """
    half_sum = 1.5 + 0.5 * A2
    disc = math.sqrt((0.5 - 0.5 * A2) ** 2 + 2.0 * A1**2 * C_star)
    lambda1 = (-half_sum - disc) / 2.0
    # conjugate form avoids cancellation when disc ~ half_sum
    lambda2 = -(1.0 + A2 - A1**2 * C_star) / (half_sum + disc)
    return JacobianSpectrum1D(A1, A2, lambda1, lambda2, C_star)


def _stationarity_residual(target, m, C, order):
    points, weights = _gauss_hermite(np.array([m]), np.array([[C]]), order)
    grad_mean, H = _expectations(np.array([m]), np.array([[C]]), target, points, weights,
                                 _resolve_mode(target, None))
    return np.array([grad_mean[0], 1.0 / C + H[0, 0]])


def find_stationary_point_1d(target: TargetModel, g0: Optional[GaussianMoments] = None,
                             quad_points: int = 200, dt: float = 0.05, t_end: float = 50.0,
                             newton_tol: float = 1e-14, max_newton: int = 50) -> GaussianMoments:
    """Fixed point of the 1D Fisher-Rao moment flow under Gauss-Hermite quadrature.

    Integrates the flow to ``t_end`` and polishes the stationarity conditions
    ``E[grad log rho] = 0``, ``C^{-1} = -E[Hess log rho]`` with Newton steps.
    """
    if target.dim != 1:
        raise UnsupportedOperationError("stationary-point search is one-dimensional")
    if g0 is None:
        g0 = GaussianMoments([0.0], [[1.0]])
    traj = integrate_moment_flow(FISHER_RAO, g0, target, dt, t_end,
                                 quadrature="gauss_hermite", gh_order=quad_points)
    m, C = float(traj.means[-1, 0]), float(traj.covs[-1, 0, 0])
    for _ in range(max_newton):
        r = _stationarity_residual(target, m, C, quad_points)
        if np.abs(r).max() < newton_tol:
            break
        hm, hC = 1e-6 * max(1.0, abs(m)), 1e-6 * C
        J = np.column_stack([
            (_stationarity_residual(target, m + hm, C, quad_points)
             - _stationarity_residual(target, m - hm, C, quad_points)) / (2 * hm),
            (_stationarity_residual(target, m, C + hC, quad_points)
             - _stationarity_residual(target, m, C - hC, quad_points)) / (2 * hC),
        ])
        step = np.linalg.solve(J, -r)
        m, C = m + step[0], C + step[1]
        if C <= 0:
            raise IntegrationError("Newton polishing produced a nonpositive covariance", last_state=traj[-1])
    return GaussianMoments([m], [[C]])


def jacobian_spectrum_1d(target: TargetModel, g_star: GaussianMoments,
                         quad_points: int = 200, tol: float = 1e-8) -> JacobianSpectrum1D:
    """Spectrum of the linearized 1D Fisher-Rao moment flow at ``g_star``."""
    if target.dim != 1 or g_star.dim != 1:
        raise UnsupportedOperationError("Jacobian spectrum is only defined for one dimension")
    rule = gauss_hermite_rule(g_star, quad_points)
    dm, dC = moment_flow_rhs(FISHER_RAO, g_star, target, rule)
    residual = math.hypot(float(dm[0]), float(dC[0, 0]))
    if residual >= tol:
        raise PreconditionError(f"g_star is not stationary: RHS norm {residual:.3e}")
    m, C = float(g_star.mean[0]), float(g_star.cov[0, 0])
    curvature = -hess_values_1d(target, rule.points)
    centred = rule.points[:, 0] - m
    A1 = float(rule.weights @ (curvature * centred))
    A2 = float(rule.weights @ (curvature * centred**2))
    return spectrum_from_moments(A1, A2, C)


def hess_values_1d(target, points):
    if target.has_hessian:
        return target.hess_log_density(points)[:, 0, 0]
    raise UnsupportedOperationError("Jacobian analysis needs an analytic Hessian")


def fisher_rao_jacobian_1d(target: TargetModel, g: GaussianMoments, quad_points: int = 200,
                           rel_step: float = 1e-6):
    """Central-difference Jacobian of the 1D Fisher-Rao RHS with respect to ``(m, C)``."""
    rhs = make_rhs(FISHER_RAO, target, quadrature="gauss_hermite", gh_order=quad_points)
    m, C = float(g.mean[0]), float(g.cov[0, 0])

    def f(mm, cc):
        dm, dC = rhs(np.array([mm]), np.array([[cc]]))
        return np.array([dm[0], dC[0, 0]])

    hm, hC = rel_step * max(1.0, abs(m)), rel_step * C
    return np.column_stack([(f(m + hm, C) - f(m - hm, C)) / (2 * hm),
                            (f(m, C + hC) - f(m, C - hC)) / (2 * hC)])


# ---------------------------------------------------------------------------
# Slow-convergence counterexample: reduced covariance dynamics at m = 0


def reduced_counterexample_rhs(name: str, C, K: int):
    """dC/dt for the even-polynomial target at ``m = 0``."""
    e = -((C - 1.0) ** (2 * K + 1))
    if name == "fisher_rao":
        return C * e
    if name == "wasserstein":
        return 2.0 * e
    if name == "vanilla":
        return e / (2.0 * C)
    raise ValueError(f"no reduced dynamics for {name!r}")


def integrate_reduced_counterexample(K: int, C0: float, t_end: float, dt: float = 0.05,
                                     name: str = "fisher_rao"):
    """RK4 on the scalar reduced ODE; returns ``(times, C_t)``."""
    n = int(math.ceil(t_end / dt - 1e-9))
    times = np.linspace(0.0, n * dt, n + 1)
    out = np.empty(n + 1)
    C = float(C0)
    out[0] = C
    f = reduced_counterexample_rhs
    for k in range(n):
        k1 = f(name, C, K)
        k2 = f(name, C + 0.5 * dt * k1, K)
        k3 = f(name, C + 0.5 * dt * k2, K)
        k4 = f(name, C + dt * k3, K)
        C = C + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k + 1] = C
    return times, out
