"""Monte Carlo estimation of the observed prior effective sample size.

One *realization* draws a parameter from the informative posterior, builds
two independent families of future-sample chains at that parameter, traces
the two distance curves over ``m = n..L`` and reads off the signed OPESS.
``mopess`` averages ``S`` realizations.

Every realization owns a random stream derived from ``(seed, index)`` via
:class:`numpy.random.SeedSequence` spawn keys, so results do not depend on
how realizations are split across workers.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Optional

import numpy as np

from .distances import DEFAULT_QUADRATURE_NODES, DistanceValue, w2sq, w2sq_gaussian2d_batch
from .models import (
    BetaBernoulliModelSpec,
    Dataset,
    FutureChains,
    GaussianModelSpec,
    ModelSpec,
    RegressionModelSpec,
    expanded_posterior,
    generate_future_chains,
    posterior_from_stats,
    sample_theta,
)
from .numerics import beta_quantile, graded_gauss_legendre

__all__ = [
    "OpessProblem",
    "OpessRealization",
    "OpessResult",
    "BoundaryWarning",
    "default_L",
    "realization_rngs",
    "distance_curves",
    "sign_and_mn",
    "opess_realization",
    "simulate",
    "mopess",
]

QUANTILE_LEVELS = (0.05, 0.5, 0.95)
BOUNDARY_WARN_FRACTION = 0.01


class BoundaryWarning(UserWarning):
    """Too many realizations hit the ``|M_n| = L - n`` edge; raise ``L``."""


def default_L(spec: ModelSpec, n: int) -> int:
    z = spec.nominal_epss
    return n + max(10 * math.ceil(z), 50)


@dataclass(frozen=True)
class OpessProblem:
    """Inputs of one MOPESS computation.

    ``theta`` forces the parameter used to generate future chains instead of
    drawing it from the informative posterior. ``chain_mode="explicit"``
    materialises every chain and recomputes posteriors from scratch; the
    default ``"summary"`` draws each chain's sufficient statistics directly,
    which has the same distribution.
    """

    spec: ModelSpec
    data: Dataset
    L: Optional[int] = None
    S: int = 2000
    seed: int = 0
    theta: object = None
    chain_mode: str = "summary"
    quad_nodes: int = DEFAULT_QUADRATURE_NODES

    def __post_init__(self):
        n = self.data.n
        if n < 1:
            raise ValueError("need at least one observation")
        if self.L is None:
            object.__setattr__(self, "L", default_L(self.spec, n))
        if int(self.L) != self.L or self.L <= n:
            raise ValueError(f"L must be an integer > n (n={n}, L={self.L})")
        object.__setattr__(self, "L", int(self.L))
        if int(self.S) != self.S or self.S < 1:
            raise ValueError("S must be a positive integer")
        if self.chain_mode not in ("summary", "explicit"):
            raise ValueError("chain_mode must be 'summary' or 'explicit'")
        # validates family/data compatibility early
        self.data.stats(self.spec)

    @property
    def n(self) -> int:
        return self.data.n

    @cached_property
    def kernel(self):
        return _make_kernel(self)


@dataclass(frozen=True)
class OpessRealization:
    m_n: int
    sign: int
    min_distance: DistanceValue
    argmin_m: int


@dataclass
class OpessResult:
    mopess: float
    quantiles: dict
    pmf: dict
    mean_min_distance: float
    boundary_fraction: float
    seed: int
    S: int
    L: int
    n: int
    m_n: np.ndarray = field(repr=False)
    min_distance: np.ndarray = field(repr=False)

    @property
    def boundary_warning(self) -> bool:
        return self.boundary_fraction > BOUNDARY_WARN_FRACTION

    def histogram(self):
        """``(values, counts)`` of the OPESS realizations, sorted by value."""
        values, counts = np.unique(self.m_n, return_counts=True)
        return values.astype(int), counts.astype(int)


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------


def realization_rngs(seed: int, index: int):
    """Independent ``(theta, primary, mirror)`` generators for one realization."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))
    return tuple(np.random.Generator(np.random.PCG64(child)) for child in ss.spawn(3))


# ---------------------------------------------------------------------------
# reference path: explicit chains, posterior objects
# ---------------------------------------------------------------------------


def distance_curves(problem: OpessProblem, chains: FutureChains):
    """``(W, W_mirror)`` indexed by ``m = n..L`` from explicit chains.

    ``W[m]`` compares the baseline posterior on ``y`` plus chain ``x^(m)``
    with the informative posterior on ``y``; ``W_mirror[m]`` compares the
    baseline posterior on ``y`` with the informative posterior on ``y``
    plus the mirror chain.
    """
    spec, data = problem.spec, problem.data
    rule = graded_gauss_legendre(problem.quad_nodes)
    info_n = posterior_from_stats(spec, data.stats(spec))
    base_n = posterior_from_stats(spec, data.stats(spec), use_baseline=True)
    w0 = float(w2sq(base_n, info_n, rule))
    W = [w0]
    Wt = [w0]
    for m in range(problem.n + 1, chains.L + 1):
        base_m = expanded_posterior(spec, data, chains.chain(m), use_baseline=True)
        info_m = expanded_posterior(spec, data, chains.chain(m, mirror=True))
        W.append(float(w2sq(base_m, info_n, rule)))
        Wt.append(float(w2sq(base_n, info_m, rule)))
    return np.array(W), np.array(Wt)


def sign_and_mn(W, W_mirror, n: int):
    """Apply the sign rule and return ``(sign, m_n, argmin_m, min_distance)``.

    Ties go to the baseline branch and, within a branch, to the smallest m.
    """
    W = np.asarray(W)
    W_mirror = np.asarray(W_mirror)
    i = int(np.argmin(W))
    j = int(np.argmin(W_mirror))
    if W[i] <= W_mirror[j]:
        return 1, i, n + i, float(W[i])
    return -1, -j, n + j, float(W_mirror[j])


# ---------------------------------------------------------------------------
# fast path: per-family kernels over sufficient statistics
# ---------------------------------------------------------------------------


class _Kernel:
    def __init__(self, problem: OpessProblem):
        self.problem = problem
        self.spec = problem.spec
        self.n = problem.n
        self.R = problem.L - problem.n
        self.r = np.arange(1, self.R + 1)
        self.stats = problem.data.stats(self.spec)
        self.info_n = posterior_from_stats(self.spec, self.stats)

    def draw_theta(self, rng):
        if self.problem.theta is not None:
            return self.problem.theta
        return sample_theta(self.info_n, rng)

    def curves(self, theta, rng_primary, rng_mirror):
        raise NotImplementedError


class _GaussianKernel(_Kernel):
    def __init__(self, problem):
        super().__init__(problem)
        sp = self.spec
        self.sigma = math.sqrt(sp.sigma2)
        self.z = sp.z
        self.ybar = self.stats.mean
        self.mu_n = self.info_n.mean
        m = self.n + self.r
        sd_info_n = self.sigma / math.sqrt(self.n + self.z)
        sd_base_n = self.sigma / math.sqrt(self.n)
        self.sd_gap = (self.sigma / np.sqrt(m) - sd_info_n) ** 2
        self.sd_gap_mirror = (sd_base_n - self.sigma / np.sqrt(m + self.z)) ** 2
        self.m = m
        self.w0 = (self.ybar - self.mu_n) ** 2 + (sd_base_n - sd_info_n) ** 2

    def curves(self, theta, rng_primary, rng_mirror):
        r, m, n = self.r, self.m, self.n
        scale = self.sigma * np.sqrt(r)
        tot = r * theta + scale * rng_primary.standard_normal(self.R)
        tot_m = r * theta + scale * rng_mirror.standard_normal(self.R)
        ny = n * self.ybar
        W = np.empty(self.R + 1)
        Wt = np.empty(self.R + 1)
        W[0] = Wt[0] = self.w0
        W[1:] = ((ny + tot) / m - self.mu_n) ** 2 + self.sd_gap
        mu_m = (ny + tot_m + self.z * self.spec.prior_mean) / (m + self.z)
        Wt[1:] = (self.ybar - mu_m) ** 2 + self.sd_gap_mirror
        return W, Wt


@lru_cache(maxsize=65536)
def _beta_quantiles(a: float, b: float, k: int) -> np.ndarray:
    q = beta_quantile(graded_gauss_legendre(k).nodes, a, b)
    q.setflags(write=False)
    return q


class _BetaDistanceTable:
    """Lazily filled ``W`` / ``Wt`` values indexed by ``(r, successes in chain)``.

    Entries depend only on the prior, ``n``, the observed success count and
    the quadrature rule, so one table is shared by every dataset (and every
    thread) with the same ``(n, s)``. Concurrent fills write identical
    values, so no locking is needed.
    """

    def __init__(self, alpha, beta, n, s, R, k):
        self.alpha, self.beta, self.n, self.s, self.k = alpha, beta, n, s, k
        self.weights = graded_gauss_legendre(k).weights
        self.q_info_n = _beta_quantiles(alpha + s, beta + n - s, k)
        self.q_base_n = _beta_quantiles(1.0 + s, 1.0 + n - s, k)
        d = self.q_base_n - self.q_info_n
        self.w0 = float(self.weights @ (d * d))
        self.tables = (np.full((R + 1, R + 1), np.nan), np.full((R + 1, R + 1), np.nan))

    def _fill(self, branch, r, k):
        s, n = self.s, self.n
        if branch == 0:
            d = _beta_quantiles(1.0 + s + k, 1.0 + n - s + r - k, self.k) - self.q_info_n
        else:
            d = self.q_base_n - _beta_quantiles(self.alpha + s + k, self.beta + n - s + r - k, self.k)
        val = float(self.weights @ (d * d))
        self.tables[branch][r, k] = val
        return val

    def lookup(self, branch, r, k):
        vals = self.tables[branch][r, k]
        for i in np.flatnonzero(np.isnan(vals)):
            vals[i] = self._fill(branch, int(r[i]), int(k[i]))
        return vals


@lru_cache(maxsize=256)
def _beta_table(alpha, beta, n, s, R, k) -> _BetaDistanceTable:
    return _BetaDistanceTable(alpha, beta, n, s, R, k)


class _BernoulliKernel(_Kernel):
    def __init__(self, problem):
        super().__init__(problem)
        sp = self.spec
        self.table = _beta_table(float(sp.alpha), float(sp.beta), self.n,
                                 self.stats.successes, self.R, problem.quad_nodes)
        self.w0 = self.table.w0

    def curves(self, theta, rng_primary, rng_mirror):
        k1 = rng_primary.binomial(self.r, theta)
        k2 = rng_mirror.binomial(self.r, theta)
        W = np.empty(self.R + 1)
        Wt = np.empty(self.R + 1)
        W[0] = Wt[0] = self.w0
        W[1:] = self.table.lookup(0, self.r, k1)
        Wt[1:] = self.table.lookup(1, self.r, k2)
        return W, Wt


def _regression_arrays(spec: RegressionModelSpec, n, sx, sxx, sy, sxy, baseline: bool):
    """Vectorised posterior means ``(..., 2)`` and covariances ``(..., 3)``."""
    s2 = spec.sigma2
    if baseline:
        det = n * sxx - sx * sx
        b2 = (n * sxy - sx * sy) / det
        b1 = (sy - b2 * sx) / n
        mean = np.stack([b1, b2], axis=-1)
        cov = np.stack([s2 * sxx / det, -s2 * sx / det, s2 * n / det], axis=-1)
        return mean, cov
    p11 = n / s2 + 1.0 / spec.tau1_sq
    p12 = sx / s2
    p22 = sxx / s2 + 1.0 / spec.tau2_sq
    r1 = sy / s2 + spec.eta0[0] / spec.tau1_sq
    r2 = sxy / s2 + spec.eta0[1] / spec.tau2_sq
    det = p11 * p22 - p12 * p12
    mean = np.stack([(p22 * r1 - p12 * r2) / det, (p11 * r2 - p12 * r1) / det], axis=-1)
    cov = np.stack([p22 / det, -p12 / det, p11 / det], axis=-1)
    return mean, cov


class _RegressionKernel(_Kernel):
    def __init__(self, problem):
        super().__init__(problem)
        st = self.stats
        self.sigma = math.sqrt(self.spec.sigma2)
        base_n = posterior_from_stats(self.spec, st, use_baseline=True)
        self.info_mean = self.info_n.mean
        c = self.info_n.cov
        self.info_cov = np.array([c.a11, c.a12, c.a22])
        self.base_mean = base_n.mean
        c = base_n.cov
        self.base_cov = np.array([c.a11, c.a12, c.a22])
        self.w0 = float(w2sq(base_n, self.info_n))
        self._sqrt_r = np.sqrt(self.r)
        self._df = np.maximum(self.r - 1, 0)

    def _chain_stats(self, theta, rng):
        # exact joint law of (sum x, sum x^2, sum y, sum xy) for r draws of
        # x ~ N(0, 1), y = b1 + b2 x + sigma e
        r = self.r
        z = rng.standard_normal((3, self.R))
        sx = self._sqrt_r * z[0]
        sxx = sx * sx / r + np.where(self._df > 0, rng.chisquare(np.maximum(self._df, 1)), 0.0)
        se = self.sigma * self._sqrt_r * z[1]
        resid_var = np.maximum(sxx - sx * sx / r, 0.0)
        sxe = self.sigma * (sx / self._sqrt_r * z[1] + np.sqrt(resid_var) * z[2])
        b1, b2 = float(theta[0]), float(theta[1])
        sy = r * b1 + b2 * sx + se
        sxy = b1 * sx + b2 * sxx + sxe
        return sx, sxx, sy, sxy

    def curves(self, theta, rng_primary, rng_mirror):
        st, spec = self.stats, self.spec
        n_tot = st.n + self.r
        sx, sxx, sy, sxy = self._chain_stats(theta, rng_primary)
        mean_b, cov_b = _regression_arrays(spec, n_tot, st.sx + sx, st.sxx + sxx,
                                           st.sy + sy, st.sxy + sxy, baseline=True)
        sx, sxx, sy, sxy = self._chain_stats(theta, rng_mirror)
        mean_i, cov_i = _regression_arrays(spec, n_tot, st.sx + sx, st.sxx + sxx,
                                           st.sy + sy, st.sxy + sxy, baseline=False)
        W = np.empty(self.R + 1)
        Wt = np.empty(self.R + 1)
        W[0] = Wt[0] = self.w0
        W[1:] = w2sq_gaussian2d_batch(mean_b, cov_b, self.info_mean, self.info_cov)
        Wt[1:] = w2sq_gaussian2d_batch(self.base_mean, self.base_cov, mean_i, cov_i)
        return W, Wt


def _make_kernel(problem: OpessProblem) -> _Kernel:
    if isinstance(problem.spec, GaussianModelSpec):
        return _GaussianKernel(problem)
    if isinstance(problem.spec, BetaBernoulliModelSpec):
        return _BernoulliKernel(problem)
    if isinstance(problem.spec, RegressionModelSpec):
        return _RegressionKernel(problem)
    raise TypeError(f"unknown model spec {problem.spec!r}")


# ---------------------------------------------------------------------------
# realizations and aggregation
# ---------------------------------------------------------------------------


def _realization_curves(problem: OpessProblem, index: int):
    rng_theta, rng_primary, rng_mirror = realization_rngs(problem.seed, index)
    kernel = problem.kernel
    theta = kernel.draw_theta(rng_theta)
    if problem.chain_mode == "explicit":
        chains = generate_future_chains(problem.spec, theta, problem.n, problem.L, rng_primary)
        return distance_curves(problem, chains)
    return kernel.curves(theta, rng_primary, rng_mirror)


def opess_realization(problem: OpessProblem, realization_index: int) -> OpessRealization:
    if not 0 <= realization_index < problem.S:
        raise IndexError("realization_index must lie in [0, S)")
    W, Wt = _realization_curves(problem, realization_index)
    sign, m_n, argmin_m, dmin = sign_and_mn(W, Wt, problem.n)
    return OpessRealization(m_n=m_n, sign=sign, min_distance=DistanceValue(dmin), argmin_m=argmin_m)


def _run_block(problem: OpessProblem, start: int, stop: int):
    m_n = np.empty(stop - start, dtype=np.int64)
    dmin = np.empty(stop - start)
    for k, idx in enumerate(range(start, stop)):
        W, Wt = _realization_curves(problem, idx)
        _, m_n[k], _, dmin[k] = sign_and_mn(W, Wt, problem.n)
    return m_n, dmin


def simulate(problem: OpessProblem, workers: int = 1, block_size: int = 256):
    """Run all ``S`` realizations; returns ``(m_n, min_distance)`` arrays."""
    problem.kernel  # build shared state once, before any threads start
    bounds = [(s, min(s + block_size, problem.S)) for s in range(0, problem.S, block_size)]
    if workers is None or workers <= 1 or len(bounds) == 1:
        parts = [_run_block(problem, a, b) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            parts = list(pool.map(lambda ab: _run_block(problem, *ab), bounds))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def summarize(problem: OpessProblem, m_n: np.ndarray, min_distance: np.ndarray) -> OpessResult:
    S = m_n.size
    values, counts = np.unique(m_n, return_counts=True)
    pmf = {int(v): c / S for v, c in zip(values, counts)}
    quantiles = {
        q: float(np.quantile(m_n, q, method="inverted_cdf")) for q in QUANTILE_LEVELS
    }
    return OpessResult(
        mopess=float(m_n.mean()),
        quantiles=quantiles,
        pmf=pmf,
        mean_min_distance=float(min_distance.mean()),
        boundary_fraction=float(np.mean(np.abs(m_n) == problem.L - problem.n)),
        seed=problem.seed,
        S=S,
        L=problem.L,
        n=problem.n,
        m_n=m_n,
        min_distance=min_distance,
    )


def mopess(problem: OpessProblem, workers: int = 1) -> OpessResult:
    """Mean OPESS with quantiles, PMF and minimum-distance summary."""
    m_n, dmin = simulate(problem, workers=workers)
    result = summarize(problem, m_n, dmin)
    if result.boundary_warning:
        warnings.warn(
            f"{result.boundary_fraction:.1%} of realizations reached |M_n| = L - n "
            f"(L={problem.L}); consider a larger L",
            BoundaryWarning,
            stacklevel=2,
        )
    return result
