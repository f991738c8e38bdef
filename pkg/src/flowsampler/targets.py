"""Unnormalized target densities rho(theta) ~ exp(-Phi(theta)) with analytic derivatives.

Every built-in target evaluates on a single point of shape ``(dim,)`` or on a
batch of shape ``(..., dim)``.  The API works with the potential ``Phi`` only;
no normalization constant is ever computed or required.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Optional

import numpy as np

from .errors import DimensionError, SPDError, UnsupportedOperationError

KINDS = ("gaussian", "logconcave", "rosenbrock", "polynomial_even", "custom")


@dataclass(frozen=True, eq=False)
class TargetModel:
    """A target density known up to normalization.

    Attributes:
        dim: Parameter dimension.
        kind: One of :data:`KINDS`.
        params: Kind-specific parameters (``lambda``, ``mean``/``cov``, ``K``/``coefficients``).
        phi: Batched potential, ``(..., dim) -> (...)``.
        grad_phi: Batched gradient of the potential, ``(..., dim) -> (..., dim)``.
        hess_phi: Batched Hessian of the potential or ``None``.
    """

    dim: int
    kind: str
    params: Mapping = field(default_factory=dict)
    phi: Callable = None
    grad_phi: Callable = None
    hess_phi: Optional[Callable] = None

    @property
    def has_hessian(self) -> bool:
        return self.hess_phi is not None

    def _check(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 0 or theta.shape[-1] != self.dim:
            raise DimensionError(
                f"expected points with trailing dimension {self.dim}, got shape {theta.shape}"
            )
        return theta

    def log_density_unnorm(self, theta):
        return -self.phi(self._check(theta))

    def grad_log_density(self, theta):
        return -self.grad_phi(self._check(theta))

    def hess_log_density(self, theta):
        if self.hess_phi is None:
            raise UnsupportedOperationError(
                f"{self.kind} target has no Hessian; use the stein_gradient estimator"
            )
        return -self.hess_phi(self._check(theta))

    def __repr__(self):
        shown = {k: v for k, v in self.params.items() if np.ndim(v) == 0}
        return f"TargetModel(kind={self.kind!r}, dim={self.dim}, params={shown})"


def log_density_unnorm(target: TargetModel, theta):
    """Return ``-Phi(theta)``."""
    return target.log_density_unnorm(theta)


def grad_log_density(target: TargetModel, theta):
    """Return ``-grad Phi(theta)``."""
    return target.grad_log_density(theta)


def hess_log_density(target: TargetModel, theta):
    """Return ``-Hess Phi(theta)``; raises for targets built without a Hessian."""
    return target.hess_log_density(theta)


# ---------------------------------------------------------------------------
# Built-in targets


def gaussian(mean, cov) -> TargetModel:
    """Gaussian target ``N(mean, cov)`` written as ``Phi = (theta-m)^T cov^{-1} (theta-m) / 2``."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    dim = mean.shape[0]
    if cov.shape != (dim, dim):
        raise DimensionError(f"covariance shape {cov.shape} does not match mean of length {dim}")
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(cov).max())):
        raise SPDError("target covariance is not symmetric")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SPDError("target covariance is not positive definite") from exc
    prec = np.linalg.inv(cov)
    prec = 0.5 * (prec + prec.T)

    def phi(x):
        d = x - mean
        return 0.5 * np.einsum("...i,ij,...j->...", d, prec, d)

    def grad_phi(x):
        return (x - mean) @ prec

    def hess_phi(x):
        lead = x.shape[:-1]
        return np.repeat(prec[None], math.prod(lead), axis=0).reshape(lead + (dim, dim))

    return TargetModel(dim, "gaussian", {"mean": mean, "cov": cov, "precision": prec},
                       phi, grad_phi, hess_phi)


def gaussian_benchmark(lam: float) -> TargetModel:
    """2D Gaussian benchmark ``Phi = theta^T diag(1, lam) theta / 2``."""
    target = gaussian(np.zeros(2), np.diag([1.0, 1.0 / lam]))
    target.params["lambda"] = float(lam)
    return target


def logconcave(lam: float) -> TargetModel:
    """``Phi = (sqrt(lam) t1 - t2)^2 / 20 + t2^4 / 20``."""
    s = math.sqrt(lam)

    def phi(x):
        u = s * x[..., 0] - x[..., 1]
        return u**2 / 20.0 + x[..., 1] ** 4 / 20.0

    def grad_phi(x):
        u = s * x[..., 0] - x[..., 1]
        out = np.empty_like(x)
        out[..., 0] = s * u / 10.0
        out[..., 1] = -u / 10.0 + x[..., 1] ** 3 / 5.0
        return out

    def hess_phi(x):
        out = np.empty(x.shape + (2,))
        out[..., 0, 0] = lam / 10.0
        out[..., 0, 1] = out[..., 1, 0] = -s / 10.0
        out[..., 1, 1] = 0.1 + 0.6 * x[..., 1] ** 2
        return out

    return TargetModel(2, "logconcave", {"lambda": float(lam)}, phi, grad_phi, hess_phi)


def rosenbrock(lam: float) -> TargetModel:
    """``Phi = lam (t2 - t1^2)^2 / 20 + (1 - t1)^2 / 20``."""

    def phi(x):
        v = x[..., 1] - x[..., 0] ** 2
        return lam * v**2 / 20.0 + (1.0 - x[..., 0]) ** 2 / 20.0

    def grad_phi(x):
        t1 = x[..., 0]
        v = x[..., 1] - t1**2
        out = np.empty_like(x)
        out[..., 0] = -lam * t1 * v / 5.0 - (1.0 - t1) / 10.0
        out[..., 1] = lam * v / 10.0
        return out

    def hess_phi(x):
        t1, t2 = x[..., 0], x[..., 1]
        out = np.empty(x.shape + (2,))
        out[..., 0, 0] = lam * (3.0 * t1**2 - t2) / 5.0 + 0.1
        out[..., 0, 1] = out[..., 1, 0] = -lam * t1 / 5.0
        out[..., 1, 1] = lam / 10.0
        return out

    return TargetModel(2, "rosenbrock", {"lambda": float(lam)}, phi, grad_phi, hess_phi)


def counterexample_coefficients(K: int) -> list:
    """Coefficients ``a_2, a_4, ..., a_{4K+2}`` of the slow-convergence polynomial.

    They are chosen so that ``f(C) = E_{N(0,C)}[Phi'']`` satisfies
    ``1 - f(C) C = -(C - 1)^(2K+1)``.  Exact rationals.
    """
    if K < 1:
        raise ValueError("K must be a positive integer")
    n = 2 * K + 1
    coeffs = []
    for k in range(1, n + 1):
        # (2k-2)! / (2^{k-1} (k-1)!) is the Gaussian moment E[X^{2k-2}]
        moment = Fraction(math.factorial(2 * k - 2), 2 ** (k - 1) * math.factorial(k - 1))
        lhs = 2 * k * (2 * k - 1) * moment
        rhs = math.comb(n, k) * (-1) ** (n - k)
        coeffs.append(Fraction(rhs) / lhs)
    return coeffs


def counterexample_f(coefficients, C):
    """``f(C) = sum_k 2k(2k-1) a_2k E[X^{2k-2}] C^{k-1}`` for the even polynomial."""
    C = np.asarray(C, dtype=float)
    total = np.zeros_like(C)
    for k, a in enumerate(coefficients, start=1):
        moment = math.factorial(2 * k - 2) / (2 ** (k - 1) * math.factorial(k - 1))
        total = total + 2 * k * (2 * k - 1) * float(a) * moment * C ** (k - 1)
    return total


def polynomial_even(K: int, coefficients=None) -> TargetModel:
    """1D target ``Phi = sum_{k=1}^{2K+1} a_2k theta^2k``.

    Without explicit coefficients the slow-convergence family is used.
    """
    if coefficients is None:
        coefficients = counterexample_coefficients(K)
    coefficients = [float(a) for a in coefficients]
    if len(coefficients) != 2 * K + 1:
        raise ValueError(f"expected {2 * K + 1} coefficients, got {len(coefficients)}")
    if coefficients[-1] <= 0:
        raise ValueError("leading coefficient must be positive for integrability")
    poly = np.zeros(4 * K + 3)
    poly[2::2] = coefficients
    d1 = np.polynomial.polynomial.polyder(poly)
    d2 = np.polynomial.polynomial.polyder(d1)
    polyval = np.polynomial.polynomial.polyval

    def phi(x):
        return polyval(x[..., 0], poly)

    def grad_phi(x):
        return polyval(x, d1)

    def hess_phi(x):
        return polyval(x, d2)[..., None]

    return TargetModel(1, "polynomial_even", {"K": int(K), "coefficients": coefficients},
                       phi, grad_phi, hess_phi)


def custom(dim: int, phi, grad_phi, hess_phi=None, vectorized: bool = False) -> TargetModel:
    """Wrap user callables for ``Phi``, its gradient and (optionally) its Hessian.

    Non-vectorized callables receive one point of shape ``(dim,)`` at a time.
    """
    if vectorized:
        return TargetModel(dim, "custom", {}, phi, grad_phi, hess_phi)

    def batched(fn, tail):
        def wrapped(x):
            flat = x.reshape(-1, dim)
            out = np.array([fn(p) for p in flat], dtype=float)
            return out.reshape(x.shape[:-1] + tail)

        return wrapped

    return TargetModel(
        dim,
        "custom",
        {},
        batched(phi, ()),
        batched(grad_phi, (dim,)),
        None if hess_phi is None else batched(hess_phi, (dim, dim)),
    )


def affine_pushforward(target: TargetModel, A, b) -> TargetModel:
    """Law of ``A theta + b`` for ``theta ~ target`` (up to normalization)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    A_inv = np.linalg.inv(A)
    has_hess = target.has_hessian

    def pull(y):
        return (y - b) @ A_inv.T

    def phi(y):
        return target.phi(pull(y))

    def grad_phi(y):
        return target.grad_phi(pull(y)) @ A_inv

    def hess_phi(y):
        return A_inv.T @ target.hess_phi(pull(y)) @ A_inv

    return TargetModel(target.dim, "custom", {"base": target.kind, "A": A, "b": b},
                       phi, grad_phi, hess_phi if has_hess else None)


def from_spec(spec: Mapping) -> TargetModel:
    """Build a target from ``{"kind": ..., "lambda": x}`` or ``{"kind": "polynomial_even", "K": n}``."""
    kind = spec.get("kind")
    if kind == "gaussian":
        if "lambda" in spec:
            return gaussian_benchmark(float(spec["lambda"]))
        return gaussian(spec["mean"], spec["cov"])
    if kind == "logconcave":
        return logconcave(float(spec["lambda"]))
    if kind == "rosenbrock":
        return rosenbrock(float(spec["lambda"]))
    if kind == "polynomial_even":
        return polynomial_even(int(spec["K"]), spec.get("coefficients"))
    raise ValueError(f"unknown target kind {kind!r}")


def finite_difference_gradient(fn, theta, rel_step=1e-5):
    """Central differences with step ``rel_step * max(1, |theta_i|)``."""
    theta = np.asarray(theta, dtype=float)
    cols = []
    for i in range(theta.shape[-1]):
        h = rel_step * max(1.0, abs(theta[i]))
        e = np.zeros_like(theta)
        e[i] = h
        cols.append((np.asarray(fn(theta + e)) - np.asarray(fn(theta - e))) / (2.0 * h))
    return np.stack(cols, axis=-1)
