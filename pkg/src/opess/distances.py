"""Discrepancies between posteriors.

All Wasserstein quantities are returned on the *squared* scale (``w2sq``).
Taking the root is monotone, so argmins and comparisons are unaffected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .models import BetaDist, Gaussian1D, Gaussian2D
from .numerics import QuadratureRule, Spd2x2, graded_gauss_legendre, spd_sqrt_2x2

__all__ = [
    "DistanceValue",
    "w2sq_gaussian1d",
    "w2sq_gaussian_mv",
    "w2sq_gaussian2d_batch",
    "w2sq_quantile",
    "w2sq_beta",
    "w2sq",
    "kl_gaussian_conjugate",
    "DEFAULT_QUADRATURE_NODES",
]

DEFAULT_QUADRATURE_NODES = 256


@dataclass(frozen=True)
class DistanceValue:
    value: float
    kind: str = "w2sq"

    def __post_init__(self):
        if self.kind not in ("w2sq", "kl"):
            raise ValueError(f"unknown distance kind {self.kind!r}")
        if self.value < 0.0:
            # round-off from the trace formula can dip just below zero
            if self.value > -1e-12:
                object.__setattr__(self, "value", 0.0)
            else:
                raise ValueError("distance must be nonnegative")

    def __float__(self) -> float:
        return float(self.value)


def w2sq_gaussian1d(a: Gaussian1D, b: Gaussian1D) -> DistanceValue:
    """``(mean_a - mean_b)^2 + (sd_a - sd_b)^2``."""
    return DistanceValue((a.mean - b.mean) ** 2 + (a.sd - b.sd) ** 2)


def w2sq_gaussian_mv(a: Gaussian2D, b: Gaussian2D) -> DistanceValue:
    """Squared W2 between bivariate normals.

    ``|mu_a - mu_b|^2 + tr(A + B - 2 (B^1/2 A B^1/2)^1/2)``, with both
    square roots taken by :func:`spd_sqrt_2x2`.
    """
    A = a.cov.to_array()
    root_b = spd_sqrt_2x2(b.cov).to_array()
    cross = Spd2x2.from_array(root_b @ A @ root_b)
    trace_term = a.cov.trace + b.cov.trace - 2.0 * spd_sqrt_2x2(cross).trace
    diff = a.mean - b.mean
    return DistanceValue(float(diff @ diff + trace_term))


def w2sq_gaussian2d_batch(mean_a, cov_a, mean_b, cov_b) -> np.ndarray:
    """Vectorised squared W2 for stacks of bivariate normals.

    Covariances are given as ``(..., 3)`` arrays of ``(a11, a12, a22)``.
    Uses ``tr sqrt(B^1/2 A B^1/2) = sqrt(tr(AB) + 2 sqrt(det A det B))``,
    which holds for any pair of 2x2 SPD matrices.
    """
    mean_a = np.asarray(mean_a, dtype=float)
    mean_b = np.asarray(mean_b, dtype=float)
    cov_a = np.asarray(cov_a, dtype=float)
    cov_b = np.asarray(cov_b, dtype=float)
    a11, a12, a22 = cov_a[..., 0], cov_a[..., 1], cov_a[..., 2]
    b11, b12, b22 = cov_b[..., 0], cov_b[..., 1], cov_b[..., 2]
    tr_ab = a11 * b11 + 2.0 * a12 * b12 + a22 * b22
    det_ab = (a11 * a22 - a12 * a12) * (b11 * b22 - b12 * b12)
    cross = np.sqrt(tr_ab + 2.0 * np.sqrt(np.maximum(det_ab, 0.0)))
    diff = mean_a - mean_b
    out = np.sum(diff * diff, axis=-1) + a11 + a22 + b11 + b22 - 2.0 * cross
    return np.maximum(out, 0.0)


def w2sq_quantile(qf_a: Callable, qf_b: Callable, rule: QuadratureRule | None = None) -> DistanceValue:
    """Squared univariate W2 as the L2 distance between quantile functions."""
    if rule is None:
        rule = graded_gauss_legendre(DEFAULT_QUADRATURE_NODES)
    diff = np.asarray(qf_a(rule.nodes)) - np.asarray(qf_b(rule.nodes))
    return DistanceValue(rule.integrate(diff * diff))


def w2sq_beta(a: BetaDist, b: BetaDist, rule: QuadratureRule | None = None) -> DistanceValue:
    return w2sq_quantile(a.ppf, b.ppf, rule)


def w2sq(a, b, rule: QuadratureRule | None = None) -> DistanceValue:
    """Dispatch on posterior type."""
    if isinstance(a, Gaussian1D) and isinstance(b, Gaussian1D):
        return w2sq_gaussian1d(a, b)
    if isinstance(a, Gaussian2D) and isinstance(b, Gaussian2D):
        return w2sq_gaussian_mv(a, b)
    if isinstance(a, BetaDist) and isinstance(b, BetaDist):
        return w2sq_beta(a, b, rule)
    raise TypeError(f"no distance between {type(a).__name__} and {type(b).__name__}")


def kl_gaussian_conjugate(n: int, m: int, z: float, sigma: float, d_mn: float) -> DistanceValue:
    """KL divergence of the flat-prior posterior after ``m`` observations
    from the conjugate posterior after ``n``:
    ``0.5 * (m/(n+z) + m D/sigma^2 - 1 + log((n+z)/m))``.
    """
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    if z < 0.0:
        raise ValueError("z must be nonnegative")
    val = 0.5 * (m / (n + z) + m * d_mn / sigma**2 - 1.0 + math.log((n + z) / m))
    return DistanceValue(max(val, 0.0) if val > -1e-12 else val, kind="kl")
