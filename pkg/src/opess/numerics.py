"""Special functions and small numerical kernels used across the package."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

__all__ = [
    "QuadratureRule",
    "Spd2x2",
    "normal_cdf",
    "ncx2_cdf_df1",
    "ncx2_sf_df1",
    "ncx2_sample_df1",
    "beta_quantile",
    "gauss_legendre",
    "graded_gauss_legendre",
    "spd_sqrt_2x2",
]


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature nodes and weights on the open unit interval."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.shape != weights.shape or nodes.ndim != 1:
            raise ValueError("nodes and weights must be 1-d arrays of equal length")
        if np.any(nodes <= 0.0) or np.any(nodes >= 1.0):
            raise ValueError("nodes must lie in the open interval (0, 1)")
        if np.any(np.diff(nodes) <= 0.0):
            raise ValueError("nodes must be strictly increasing")
        if np.any(weights <= 0.0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


@dataclass(frozen=True)
class Spd2x2:
    """Symmetric positive definite 2x2 matrix ``[[a11, a12], [a12, a22]]``."""

    a11: float
    a12: float
    a22: float

    def __post_init__(self):
        if not (self.a11 > 0.0 and self.a11 * self.a22 - self.a12 * self.a12 > 0.0):
            raise ValueError(f"matrix is not positive definite: {self}")

    @property
    def det(self) -> float:
        return self.a11 * self.a22 - self.a12 * self.a12

    @property
    def trace(self) -> float:
        return self.a11 + self.a22

    def to_array(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a12, self.a22]])

    @classmethod
    def from_array(cls, m) -> "Spd2x2":
        m = np.asarray(m, dtype=float)
        if m.shape != (2, 2):
            raise ValueError("expected a 2x2 matrix")
        if abs(m[0, 1] - m[1, 0]) > 1e-12 * max(1.0, abs(m[0, 1])):
            raise ValueError("matrix is not symmetric")
        return cls(float(m[0, 0]), float(0.5 * (m[0, 1] + m[1, 0])), float(m[1, 1]))


def normal_cdf(x):
    """Standard normal CDF. Accepts scalars or arrays."""
    out = special.ndtr(x)
    return float(out) if np.ndim(out) == 0 else out


def ncx2_cdf_df1(x, lam):
    """CDF of the noncentral chi-square with one degree of freedom.

    Uses ``P(X <= x) = Phi(sqrt(x) - sqrt(lam)) - Phi(-sqrt(x) - sqrt(lam))``,
    which is exact for df=1. Negative ``x`` raises; callers that need the
    CDF to vanish below zero should clip first (see :func:`ncx2_sf_df1`).
    """
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if np.any(x < 0.0):
        raise ValueError("x must be nonnegative")
    if np.any(lam < 0.0):
        raise ValueError("noncentrality must be nonnegative")
    rx = np.sqrt(x)
    rl = np.sqrt(lam)
    out = special.ndtr(rx - rl) - special.ndtr(-rx - rl)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def ncx2_sf_df1(x, lam):
    """Survival function ``P(X > x)`` for df=1, defined for any real ``x``.

    Returns 1 for ``x <= 0``. Computed as ``Phi(sqrt(lam) - sqrt(x)) +
    Phi(-sqrt(x) - sqrt(lam))`` to keep precision in the upper tail.
    """
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    rx = np.sqrt(np.maximum(x, 0.0))
    rl = np.sqrt(lam)
    out = special.ndtr(rl - rx) + special.ndtr(-rx - rl)
    out = np.where(x <= 0.0, 1.0, np.clip(out, 0.0, 1.0))
    return float(out) if out.ndim == 0 else out


def ncx2_sample_df1(lam, rng: np.random.Generator, size=None, z=None):
    """Draw ``(sqrt(lam) + Z)**2`` with ``Z`` standard normal.

    ``z`` may be supplied to force the normal deviate (used in tests).
    """
    if np.any(np.asarray(lam) < 0.0):
        raise ValueError("noncentrality must be nonnegative")
    if z is None:
        z = rng.standard_normal(size)
    return (np.sqrt(lam) + z) ** 2


def beta_quantile(p, alpha: float, beta: float):
    """Inverse of the regularized incomplete beta function in ``x``.

    Starts from :func:`scipy.special.betaincinv` and applies safeguarded
    Newton steps against :func:`scipy.special.betainc` until the absolute
    step falls below 1e-12.
    """
    p_arr = np.asarray(p, dtype=float)
    if np.any(~((p_arr > 0.0) & (p_arr < 1.0))):
        raise ValueError("p must lie in the open interval (0, 1)")
    if not (alpha > 0.0 and beta > 0.0):
        raise ValueError("alpha and beta must be positive")
    x = np.asarray(special.betaincinv(alpha, beta, p_arr), dtype=float)
    log_norm = special.betaln(alpha, beta)
    for _ in range(4):
        inside = (x > 0.0) & (x < 1.0)
        if not np.any(inside):
            break
        xi = np.where(inside, x, 0.5)
        resid = special.betainc(alpha, beta, xi) - p_arr
        logpdf = (alpha - 1.0) * np.log(xi) + (beta - 1.0) * np.log1p(-xi) - log_norm
        step = np.where(inside, resid / np.exp(logpdf), 0.0)
        # keep the iterate inside (0, 1); a step that would leave is halved away
        cand = x - step
        cand = np.where(cand <= 0.0, 0.5 * x, cand)
        cand = np.where(cand >= 1.0, 0.5 * (x + 1.0), cand)
        x = np.where(inside, cand, x)
        if np.max(np.abs(step)) < 1e-12:
            break
    return float(x) if x.ndim == 0 else x


@lru_cache(maxsize=32)
def _leggauss(k: int):
    return np.polynomial.legendre.leggauss(k)


def gauss_legendre(k: int) -> QuadratureRule:
    """``k``-point Gauss-Legendre rule mapped from [-1, 1] to (0, 1)."""
    if int(k) != k or k < 2:
        raise ValueError("k must be an integer >= 2")
    x, w = _leggauss(int(k))
    return QuadratureRule(nodes=0.5 * (x + 1.0), weights=0.5 * w)


@lru_cache(maxsize=32)
def graded_gauss_legendre(k: int) -> QuadratureRule:
    """``k``-point Gauss-Legendre rule after the substitution
    ``u = 10 t^3 - 15 t^4 + 6 t^5``.

    The substitution has vanishing first and second derivatives at both
    ends, so nodes cluster near 0 and 1. Quantile integrands that blow up
    logarithmically at the endpoints (the normal quantile) then converge
    to near machine precision, while smooth integrands lose nothing.
    """
    base = gauss_legendre(k)
    t = base.nodes
    u = t**3 * (10.0 + t * (6.0 * t - 15.0))
    du = 30.0 * t**2 * (1.0 - t) ** 2
    w = base.weights * du
    # the substitution maps polynomials to polynomials, so the sum is 1 up to rounding
    return QuadratureRule(nodes=u, weights=w / w.sum())


def spd_sqrt_2x2(m: Spd2x2) -> Spd2x2:
    """Principal square root via ``(M + sqrt(det) I) / sqrt(tr + 2 sqrt(det))``."""
    if not isinstance(m, Spd2x2):
        m = Spd2x2.from_array(m)
    s = math.sqrt(m.det)
    t = math.sqrt(m.trace + 2.0 * s)
    return Spd2x2((m.a11 + s) / t, m.a12 / t, (m.a22 + s) / t)
