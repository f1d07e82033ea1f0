"""Conjugate model families, their posteriors and posterior-predictive chains.

Three families are supported:

* ``GaussianModelSpec`` -- normal observations with known variance, normal
  (or flat) prior on the mean.
* ``BetaBernoulliModelSpec`` -- 0/1 observations with a Beta prior; the
  baseline prior is always Beta(1, 1).
* ``RegressionModelSpec`` -- simple linear regression ``y = b1 + b2 x + e``
  with known noise variance and an independent normal prior on ``(b1, b2)``.

Posteriors are computed from sufficient statistics so that appending a
chain of future observations costs only the length of the chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .numerics import Spd2x2, beta_quantile

__all__ = [
    "GaussianModelSpec",
    "BetaBernoulliModelSpec",
    "RegressionModelSpec",
    "ModelSpec",
    "Dataset",
    "GaussianStats",
    "BernoulliStats",
    "RegressionStats",
    "Gaussian1D",
    "BetaDist",
    "Gaussian2D",
    "Posterior",
    "FutureChains",
    "posterior_gaussian",
    "posterior_beta",
    "posterior_regression",
    "posterior_from_stats",
    "sample_theta",
    "generate_future_chains",
    "expanded_posterior",
]

_TINY_VAR = 1e-300


# ---------------------------------------------------------------------------
# model specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianModelSpec:
    """Normal likelihood with known ``sigma2``; ``prior_var=None`` is flat."""

    sigma2: float = 1.0
    prior_mean: float = 0.0
    prior_var: Optional[float] = 0.1

    family = "gaussian"

    def __post_init__(self):
        if not self.sigma2 > 0.0:
            raise ValueError("sigma2 must be > 0")
        if self.prior_var is not None and not self.prior_var > 0.0:
            raise ValueError("prior_var must be > 0")

    @property
    def flat(self) -> bool:
        return self.prior_var is None

    @property
    def z(self) -> float:
        """Prior-to-noise precision ratio ``sigma2 / prior_var`` (0 if flat)."""
        return 0.0 if self.flat else self.sigma2 / self.prior_var

    @property
    def nominal_epss(self) -> float:
        return self.z


@dataclass(frozen=True)
class BetaBernoulliModelSpec:
    """Bernoulli likelihood with an informative Beta(alpha, beta) prior."""

    alpha: float = 5.0
    beta: float = 5.0

    family = "bernoulli"

    def __post_init__(self):
        if not (self.alpha > 0.0 and self.beta > 0.0):
            raise ValueError("alpha and beta must be > 0")

    @property
    def nominal_epss(self) -> float:
        # relative to the Beta(1, 1) baseline
        return self.alpha + self.beta - 2.0


@dataclass(frozen=True)
class RegressionModelSpec:
    """Simple linear regression with known noise variance.

    ``tau1_sq`` and ``tau2_sq`` are the prior variances of intercept and
    slope; ``None`` for both makes the prior flat.
    """

    sigma2: float = 1.0
    eta0: tuple = (0.0, 0.0)
    tau1_sq: Optional[float] = 0.1
    tau2_sq: Optional[float] = 0.1

    family = "regression"

    def __post_init__(self):
        if not self.sigma2 > 0.0:
            raise ValueError("sigma2 must be > 0")
        eta0 = tuple(float(v) for v in self.eta0)
        if len(eta0) != 2:
            raise ValueError("eta0 must have two entries")
        object.__setattr__(self, "eta0", eta0)
        if (self.tau1_sq is None) != (self.tau2_sq is None):
            raise ValueError("tau1_sq and tau2_sq must both be set or both be flat")
        for name in ("tau1_sq", "tau2_sq"):
            v = getattr(self, name)
            if v is not None and not v > 0.0:
                raise ValueError(f"{name} must be > 0")

    @property
    def flat(self) -> bool:
        return self.tau1_sq is None

    @property
    def z(self) -> tuple:
        if self.flat:
            return (0.0, 0.0)
        return (self.sigma2 / self.tau1_sq, self.sigma2 / self.tau2_sq)

    @property
    def nominal_epss(self) -> float:
        return max(self.z)


ModelSpec = Union[GaussianModelSpec, BetaBernoulliModelSpec, RegressionModelSpec]


# ---------------------------------------------------------------------------
# data and sufficient statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianStats:
    n: int
    total: float

    @property
    def mean(self) -> float:
        return self.total / self.n

    def __add__(self, other: "GaussianStats") -> "GaussianStats":
        return GaussianStats(self.n + other.n, self.total + other.total)


@dataclass(frozen=True)
class BernoulliStats:
    n: int
    successes: int

    def __add__(self, other: "BernoulliStats") -> "BernoulliStats":
        return BernoulliStats(self.n + other.n, self.successes + other.successes)


@dataclass(frozen=True)
class RegressionStats:
    n: int
    sx: float = 0.0
    sxx: float = 0.0
    sy: float = 0.0
    sxy: float = 0.0

    def __add__(self, other: "RegressionStats") -> "RegressionStats":
        return RegressionStats(
            self.n + other.n,
            self.sx + other.sx,
            self.sxx + other.sxx,
            self.sy + other.sy,
            self.sxy + other.sxy,
        )

    def ols(self) -> np.ndarray:
        det = self.n * self.sxx - self.sx * self.sx
        if not det > 1e-12 * max(1.0, self.n * self.sxx):
            raise np.linalg.LinAlgError("design matrix [1, x] is rank deficient")
        b2 = (self.n * self.sxy - self.sx * self.sy) / det
        b1 = (self.sy - b2 * self.sx) / self.n
        return np.array([b1, b2])


@dataclass(frozen=True)
class Dataset:
    """Observed data: ``y`` alone for scalar families, ``(x, y)`` for regression."""

    y: np.ndarray
    x: Optional[np.ndarray] = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        if not np.all(np.isfinite(y)):
            raise ValueError("observations must be finite")
        object.__setattr__(self, "y", y)
        if self.x is not None:
            x = np.asarray(self.x, dtype=float).ravel()
            if x.shape != y.shape:
                raise ValueError("x and y must have the same length")
            if not np.all(np.isfinite(x)):
                raise ValueError("covariates must be finite")
            object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return int(self.y.size)

    @property
    def ybar(self) -> float:
        return float(self.y.mean())

    def stats(self, spec: ModelSpec):
        return _stats_for(spec, self.y, self.x)


def _stats_for(spec: ModelSpec, y, x=None):
    y = np.asarray(y, dtype=float)
    if isinstance(spec, GaussianModelSpec):
        if x is not None or y.ndim != 1:
            raise ValueError("gaussian family expects scalar observations")
        return GaussianStats(int(y.size), float(y.sum()))
    if isinstance(spec, BetaBernoulliModelSpec):
        if x is not None or y.ndim != 1:
            raise ValueError("bernoulli family expects scalar observations")
        if not np.all((y == 0.0) | (y == 1.0)):
            raise ValueError("bernoulli observations must be 0 or 1")
        return BernoulliStats(int(y.size), int(y.sum()))
    if isinstance(spec, RegressionModelSpec):
        if x is None:
            if y.ndim == 2 and y.shape[1] == 2:
                x, y = y[:, 0], y[:, 1]
            elif y.size == 0:
                x = y
            else:
                raise ValueError("regression family expects (x, y) pairs")
        x = np.asarray(x, dtype=float)
        return RegressionStats(
            int(y.size),
            float(x.sum()),
            float(x @ x),
            float(y.sum()),
            float(x @ y),
        )
    raise TypeError(f"unknown model spec {spec!r}")


# ---------------------------------------------------------------------------
# posteriors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Gaussian1D:
    mean: float
    var: float

    def __post_init__(self):
        if not self.var >= 0.0:
            raise ValueError("var must be nonnegative")

    @property
    def sd(self) -> float:
        return math.sqrt(self.var)

    def ppf(self, u):
        from scipy.special import ndtri

        return self.mean + self.sd * ndtri(u)


@dataclass(frozen=True)
class BetaDist:
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0.0 and self.b > 0.0):
            raise ValueError("Beta parameters must be positive")

    @property
    def mean(self) -> float:
        return self.a / (self.a + self.b)

    def ppf(self, u):
        return beta_quantile(u, self.a, self.b)


@dataclass(frozen=True)
class Gaussian2D:
    mean: np.ndarray
    cov: Spd2x2

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(2)
        mean.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        if not isinstance(self.cov, Spd2x2):
            object.__setattr__(self, "cov", Spd2x2.from_array(self.cov))


Posterior = Union[Gaussian1D, BetaDist, Gaussian2D]


def posterior_gaussian(spec: GaussianModelSpec, n: int, ybar: float,
                       use_baseline: bool = False) -> Gaussian1D:
    """Posterior of the mean after ``n`` observations averaging ``ybar``.

    With a flat prior (or ``use_baseline``) this is ``N(ybar, sigma2/n)``;
    otherwise ``N(w ybar + (1-w) mu0, sigma2/(n+z))`` with ``w = n/(n+z)``.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    if spec.flat or use_baseline:
        if n == 0:
            raise ValueError("improper posterior: flat prior with no data")
        return Gaussian1D(float(ybar), spec.sigma2 / n)
    z = spec.z
    w = n / (n + z)
    mean = w * ybar + (1.0 - w) * spec.prior_mean if n > 0 else spec.prior_mean
    return Gaussian1D(float(mean), spec.sigma2 / (n + z))


def posterior_beta(spec: BetaBernoulliModelSpec, successes: int, n: int,
                   use_baseline: bool = False) -> BetaDist:
    if not 0 <= successes <= n:
        raise ValueError("successes must lie in [0, n]")
    a0, b0 = (1.0, 1.0) if use_baseline else (spec.alpha, spec.beta)
    return BetaDist(a0 + successes, b0 + n - successes)


def _regression_posterior(spec: RegressionModelSpec, st: RegressionStats,
                          use_baseline: bool) -> Gaussian2D:
    s2 = spec.sigma2
    if spec.flat or use_baseline:
        if st.n < 2:
            raise np.linalg.LinAlgError("flat-prior regression needs n >= 2")
        mean = st.ols()
        det = st.n * st.sxx - st.sx * st.sx
        cov = Spd2x2(s2 * st.sxx / det, -s2 * st.sx / det, s2 * st.n / det)
        return Gaussian2D(mean, cov)
    p11 = st.n / s2 + 1.0 / spec.tau1_sq
    p12 = st.sx / s2
    p22 = st.sxx / s2 + 1.0 / spec.tau2_sq
    r1 = st.sy / s2 + spec.eta0[0] / spec.tau1_sq
    r2 = st.sxy / s2 + spec.eta0[1] / spec.tau2_sq
    det = p11 * p22 - p12 * p12
    mean = np.array([(p22 * r1 - p12 * r2) / det, (p11 * r2 - p12 * r1) / det])
    return Gaussian2D(mean, Spd2x2(p22 / det, -p12 / det, p11 / det))


def posterior_regression(spec: RegressionModelSpec, data: Dataset,
                         use_baseline: bool = False) -> Gaussian2D:
    """Informative posterior has precision ``X'X/sigma2 + diag(1/tau^2)``;
    the baseline posterior is ``N(beta_OLS, sigma2 (X'X)^-1)``."""
    return _regression_posterior(spec, data.stats(spec), use_baseline)


def posterior_from_stats(spec: ModelSpec, stats, use_baseline: bool = False) -> Posterior:
    """Dispatch on the family to build a posterior from sufficient statistics."""
    if isinstance(spec, GaussianModelSpec):
        ybar = stats.total / stats.n if stats.n else 0.0
        return posterior_gaussian(spec, stats.n, ybar, use_baseline)
    if isinstance(spec, BetaBernoulliModelSpec):
        return posterior_beta(spec, stats.successes, stats.n, use_baseline)
    if isinstance(spec, RegressionModelSpec):
        return _regression_posterior(spec, stats, use_baseline)
    raise TypeError(f"unknown model spec {spec!r}")


def sample_theta(post: Posterior, rng: np.random.Generator):
    """One exact draw from a posterior."""
    if isinstance(post, Gaussian1D):
        if post.var < _TINY_VAR:
            return float(post.mean)
        return float(post.mean + post.sd * rng.standard_normal())
    if isinstance(post, BetaDist):
        return float(rng.beta(post.a, post.b))
    if isinstance(post, Gaussian2D):
        c = post.cov
        l11 = math.sqrt(c.a11)
        l21 = c.a12 / l11
        l22 = math.sqrt(c.a22 - l21 * l21)
        z = rng.standard_normal(2)
        return post.mean + np.array([l11 * z[0], l21 * z[0] + l22 * z[1]])
    raise TypeError(f"cannot sample from {post!r}")


# ---------------------------------------------------------------------------
# posterior-predictive chains
# ---------------------------------------------------------------------------


@dataclass
class FutureChains:
    """Two independent families of future-sample chains for ``m = n+1..L``.

    ``primary[i]`` and ``mirror[i]`` hold the ``i+1`` extra observations of
    the chains indexed by ``m = n + i + 1``. Regression chains are arrays of
    shape ``(r, 2)`` holding ``(x, y)`` pairs.
    """

    n: int
    L: int
    theta_star: object
    primary: list = field(default_factory=list)
    mirror: list = field(default_factory=list)

    def chain(self, m: int, mirror: bool = False) -> np.ndarray:
        if not self.n < m <= self.L:
            raise IndexError(f"m must lie in ({self.n}, {self.L}]")
        return (self.mirror if mirror else self.primary)[m - self.n - 1]


def _draw_observations(spec: ModelSpec, theta, r: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(spec, GaussianModelSpec):
        if spec.sigma2 < _TINY_VAR:
            return np.full(r, float(theta))
        return theta + math.sqrt(spec.sigma2) * rng.standard_normal(r)
    if isinstance(spec, BetaBernoulliModelSpec):
        return (rng.random(r) < theta).astype(float)
    if isinstance(spec, RegressionModelSpec):
        x = rng.standard_normal(r)
        y = theta[0] + theta[1] * x + math.sqrt(spec.sigma2) * rng.standard_normal(r)
        return np.column_stack([x, y])
    raise TypeError(f"unknown model spec {spec!r}")


def generate_future_chains(spec: ModelSpec, theta_star, n: int, L: int,
                           rng: np.random.Generator) -> FutureChains:
    """Draw every chain ``x^(m)`` and ``x~^(m)`` at one shared parameter value.

    Primary and mirror families come from two child streams spawned off
    ``rng`` so they stay independent of each other.
    """
    if L < n:
        raise ValueError("L must be >= n")
    rng_primary, rng_mirror = rng.spawn(2)
    chains = FutureChains(n=n, L=L, theta_star=theta_star)
    for r in range(1, L - n + 1):
        chains.primary.append(_draw_observations(spec, theta_star, r, rng_primary))
        chains.mirror.append(_draw_observations(spec, theta_star, r, rng_mirror))
    return chains


def expanded_posterior(spec: ModelSpec, data: Dataset, chain, use_baseline: bool = False) -> Posterior:
    """Posterior given ``data`` followed by the extra observations ``chain``."""
    chain = np.asarray(chain, dtype=float)
    if isinstance(spec, RegressionModelSpec):
        if chain.size and (chain.ndim != 2 or chain.shape[1] != 2):
            raise ValueError("regression chains must hold (x, y) pairs")
        extra = _stats_for(spec, chain.reshape(-1, 2)) if chain.size else RegressionStats(0)
    else:
        if chain.ndim != 1:
            raise ValueError(f"{spec.family} chains must be 1-d")
        extra = _stats_for(spec, chain)
    return posterior_from_stats(spec, data.stats(spec) + extra, use_baseline)
