"""Closed-form results for the Gaussian conjugate model.

Notation: ``n`` observations with mean ``ybar``, known noise sd ``sigma``,
conjugate prior ``N(mu0, sigma^2 / z)``. For ``m > n`` let ``r = m - n``,
``w_m = m / (m + z)`` and ``mu_n = w_n ybar + (1 - w_n) mu0``.

* ``W(m)`` is the squared W2 distance between the flat-prior posterior
  after ``m`` observations and the conjugate posterior after ``n``;
  ``W(m) = (mu_n - xbar_m)^2 + c_m^2`` with
  ``c_m^2 = (sigma/sqrt(m) - sigma/sqrt(n+z))^2``.
* ``Wt(m)`` compares the flat-prior posterior after ``n`` with the
  conjugate posterior after ``m``; its sd gap is
  ``ct_m^2 = (sigma/sqrt(n) - sigma/sqrt(m+z))^2``.

Given the generating mean ``mu`` both are shifted, scaled noncentral
chi-square(1) variables; every distribution function below reduces to
normal CDFs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .engine import sign_and_mn
from .numerics import ncx2_sample_df1, ncx2_sf_df1, normal_cdf

__all__ = [
    "CondDistParams",
    "MarginalDistParams",
    "PmfQuery",
    "cond_dist_params",
    "cond_distance_sample",
    "marginal_dist_params",
    "truncation_bounds",
    "opess_pmf",
    "opess_pmf_table",
    "prop1_curves",
    "PROP1_MODES",
    "small_mopess_probs",
    "small_mopess_thresholds",
    "expected_kl_bootstrap",
    "kl_optimal_m",
    "kl_optimal_m_continuous",
    "kl_w2_ratio",
]


def _check_m(m, n):
    if m <= n:
        raise ValueError(f"m must exceed n (m={m}, n={n})")


def _sd_gap(sigma, a, b):
    return (sigma / np.sqrt(a) - sigma / np.sqrt(b)) ** 2


# ---------------------------------------------------------------------------
# distance distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CondDistParams:
    """Parameters of ``W(m)`` and ``Wt(m)`` given ``ybar`` and ``mu``.

    ``W(m) ~ tau_m * chi2_1(lambda_m / tau_m) + c_m2`` and
    ``Wt(m) ~ kappa_m * chi2_1(delta_m / kappa_m) + ct_m2``; ``lambda_m``
    and ``delta_m`` are squared means of the underlying normals.
    """

    tau_m: float
    lambda_m: float
    c_m2: float
    kappa_m: float
    delta_m: float
    ct_m2: float

    def primary(self):
        return self.tau_m, self.lambda_m, self.c_m2

    def mirror(self):
        return self.kappa_m, self.delta_m, self.ct_m2


def cond_dist_params(m, n, z, sigma, ybar, mu, mu0=0.0) -> CondDistParams:
    _check_m(m, n)
    r = m - n
    w_n = n / (n + z)
    w_m = m / (m + z)
    tau = r * sigma**2 / m**2
    lam = ((z / (n + z) - r / m) * (ybar - mu) + (1.0 - w_n) * (mu - mu0)) ** 2
    delta = ((r + z) / (m + z) * (ybar - mu) + (1.0 - w_m) * (mu - mu0)) ** 2
    return CondDistParams(
        tau_m=tau,
        lambda_m=lam,
        c_m2=float(_sd_gap(sigma, m, n + z)),
        kappa_m=w_m**2 * tau,
        delta_m=delta,
        ct_m2=float(_sd_gap(sigma, n, m + z)),
    )


def cond_distance_sample(params: CondDistParams, branch: str, rng: np.random.Generator,
                         size=None, z=None):
    """Draw ``W(m)`` (``branch="primary"``) or ``Wt(m)`` (``"mirror"``)."""
    if branch == "primary":
        scale, mean2, shift = params.primary()
    elif branch == "mirror":
        scale, mean2, shift = params.mirror()
    else:
        raise ValueError("branch must be 'primary' or 'mirror'")
    return scale * ncx2_sample_df1(mean2 / scale, rng, size=size, z=z) + shift


@dataclass(frozen=True)
class MarginalDistParams:
    """Laws of ``W(m)``, ``Wt(m)`` given only ``ybar`` (``mu`` integrated out).

    ``W(m) ~ tau_m * chi2_1(lam / (m^2 tau_m)) + c_m^2`` and
    ``Wt(m) ~ kappa_m * chi2_1(delta / kappa_m) + ct_m^2``.
    """

    tau_m: float
    lam: float
    kappa_m: float
    delta: float


def marginal_dist_params(m, n, z, sigma, ybar, mu0=0.0) -> MarginalDistParams:
    _check_m(m, n)
    r = m - n
    w_n = n / (n + z)
    w_m = m / (m + z)
    tau = (r / m) ** 2 * (w_n / n + 1.0 / r) * sigma**2
    lam = (n * (1.0 - w_n) * (ybar - mu0)) ** 2
    return MarginalDistParams(tau_m=tau, lam=lam, kappa_m=w_m**2 * tau, delta=lam / n**2)


def truncation_bounds(t, n, z, sigma):
    """Smallest ``m`` past which each distance surely exceeds ``t``.

    Returns ``(M, Mt)``: ``M`` is the least integer ``m >= n + z`` with
    ``c_m^2 > t`` and ``Mt`` the least ``m >= n + 1`` with ``ct_m^2 > t``.
    Both are ``math.inf`` when ``t > sigma^2 / (n + z)``.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t > sigma**2 / (n + z):
        return math.inf, math.inf

    def c2(m):
        return (sigma / math.sqrt(m) - sigma / math.sqrt(n + z)) ** 2

    def ct2(m):
        return (sigma / math.sqrt(n) - sigma / math.sqrt(m + z)) ** 2

    base = sigma / math.sqrt(n + z) - math.sqrt(t)
    if base <= 0.0:
        M = math.inf
    else:
        M = max(math.ceil(n + z), math.floor((sigma / base) ** 2) + 1)
        # the closed form can be off by one in floating point
        while M > math.ceil(n + z) and c2(M - 1) > t:
            M -= 1
        while not c2(M) > t:
            M += 1

    base = sigma / math.sqrt(n) - math.sqrt(t)
    if base <= 0.0:
        Mt = math.inf
    else:
        Mt = max(n + 1, math.floor((sigma / base) ** 2 - z) + 1)
        while Mt > n + 1 and ct2(Mt - 1) > t:
            Mt -= 1
        while not ct2(Mt) > t:
            Mt += 1
    return M, Mt


# ---------------------------------------------------------------------------
# OPESS probability mass function
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PmfQuery:
    """One ``P(M_n = v | ybar)`` evaluation.

    ``mu`` fixes the generating mean (conditional PMF); otherwise
    ``mu_draws`` values are drawn from the conjugate posterior. With ``L``
    set, the horizon is the finite ``m <= L`` used by the simulation engine
    and the ``sigma^2/(n+z)`` cutoff is dropped; with ``L=None`` the
    infinite-horizon expression with its truncation bounds is used.
    """

    v: int
    ybar: float
    n: int
    z: float
    sigma: float = 1.0
    mu_draws: int = 1000
    t_draws: int = 1000
    mu0: float = 0.0
    mu: Optional[float] = None
    L: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.mu_draws < 1 or self.t_draws < 1:
            raise ValueError("mu_draws and t_draws must be >= 1")
        if self.n < 1 or self.z < 0 or not self.sigma > 0:
            raise ValueError("need n >= 1, z >= 0 and sigma > 0")
        if self.L is not None and self.L <= self.n:
            raise ValueError("L must exceed n")

    @property
    def mu_n(self) -> float:
        w = self.n / (self.n + self.z)
        return w * self.ybar + (1.0 - w) * self.mu0

    @property
    def w_at_n(self) -> float:
        """``W(n) = Wt(n)``, the distance with no extra samples."""
        return (self.ybar - self.mu_n) ** 2 + float(_sd_gap(self.sigma, self.n, self.n + self.z))


def _param_arrays(q: PmfQuery, mu, m):
    """Conditional parameters for a column of ``mu`` and a row of ``m``."""
    n, z, s2 = q.n, q.z, q.sigma**2
    mu = np.asarray(mu, dtype=float)[:, None]
    m = np.asarray(m, dtype=float)[None, :]
    r = m - n
    w_n = n / (n + z)
    w_m = m / (m + z)
    tau = r * s2 / m**2
    lam = ((z / (n + z) - r / m) * (q.ybar - mu) + (1.0 - w_n) * (mu - q.mu0)) ** 2
    delta = ((r + z) / (m + z) * (q.ybar - mu) + (1.0 - w_m) * (mu - q.mu0)) ** 2
    c2 = _sd_gap(q.sigma, m, n + z)
    ct2 = _sd_gap(q.sigma, n, m + z)
    return tau, lam, c2, w_m**2 * tau, delta, ct2


def _survival_product(q: PmfQuery, mu, t, upper, skip_m=None, skip_mirror=False, block=256):
    """``prod_m P(W(m) > t) * prod_m P(Wt(m) > t)`` over ``m = n+1..upper``.

    ``mu`` and ``t`` are paired 1-d arrays. ``skip_m`` removes one index
    from the primary (or, with ``skip_mirror``, the mirror) product.
    """
    out = np.ones(t.size)
    tcol = t[:, None]
    for start in range(q.n + 1, upper + 1, block):
        m = np.arange(start, min(start + block, upper + 1))
        tau, lam, c2, kappa, delta, ct2 = _param_arrays(q, mu, m)
        sf_p = ncx2_sf_df1((tcol - c2) / tau, lam / tau)
        sf_m = ncx2_sf_df1((tcol - ct2) / kappa, delta / kappa)
        if skip_m is not None and start <= skip_m < start + m.size:
            (sf_m if skip_mirror else sf_p)[:, skip_m - start] = 1.0
        out *= sf_p.prod(axis=1) * sf_m.prod(axis=1)
        if not out.any():
            break
    return out


def _horizon(q: PmfQuery, t_max: float) -> int:
    if q.L is not None:
        return q.L
    M, Mt = truncation_bounds(t_max, q.n, q.z, q.sigma)
    return int(max(M, Mt))


def _mu_samples(q: PmfQuery, rng: np.random.Generator) -> np.ndarray:
    if q.mu is not None:
        return np.full(q.mu_draws, float(q.mu))
    sd = q.sigma / math.sqrt(q.n + q.z)
    return q.mu_n + sd * rng.standard_normal(q.mu_draws)


def opess_pmf(query: PmfQuery, chunk: int = 4096) -> float:
    """Monte Carlo estimate of ``P(M_n = v | ybar)``.

    The distance at ``m = n + |v|`` is sampled from its exact conditional
    law, so each draw contributes the probability that every other
    distance exceeds it.
    """
    q = query
    v = int(q.v)
    if q.L is not None and abs(v) > q.L - q.n:
        return 0.0
    w_n = q.w_at_n
    cap = q.sigma**2 / (q.n + q.z)
    ss = np.random.SeedSequence(int(q.seed), spawn_key=(abs(v), int(v < 0)))
    rng_mu, rng_t = (np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(2))
    mu = _mu_samples(q, rng_mu)

    if v == 0:
        if q.L is None and w_n > cap:
            return 0.0
        t = np.full(mu.size, w_n)
        return float(_survival_product(q, mu, t, _horizon(q, w_n)).mean())

    m_v = q.n + abs(v)
    mirror = v < 0
    total = 0.0
    count = mu.size * q.t_draws
    mu_all = np.repeat(mu, q.t_draws)
    for start in range(0, count, chunk):
        mu_c = mu_all[start:start + chunk]
        tau, lam, c2, kappa, delta, ct2 = (a[:, 0] for a in _param_arrays(q, mu_c, [m_v]))
        if mirror:
            scale, mean2, shift = kappa, delta, ct2
        else:
            scale, mean2, shift = tau, lam, c2
        t = scale * ncx2_sample_df1(mean2 / scale, rng_t, size=mu_c.size) + shift
        keep = t <= w_n
        if q.L is None:
            keep &= t <= cap
        if not keep.any():
            continue
        tk = t[keep]
        prod = _survival_product(q, mu_c[keep], tk, _horizon(q, float(tk.max())),
                                 skip_m=m_v, skip_mirror=mirror)
        total += prod.sum()
    return float(total / count)


def opess_pmf_table(base: PmfQuery, values) -> np.ndarray:
    """``opess_pmf`` at each ``v`` in ``values`` (other fields from ``base``)."""
    from dataclasses import replace

    return np.array([opess_pmf(replace(base, v=int(v))) for v in values])


# ---------------------------------------------------------------------------
# deterministic curves with the extra-sample mean held at its expectation
# ---------------------------------------------------------------------------

PROP1_MODES = ("posterior_predictive", "bootstrap", "prior")


def prop1_curves(mode, n, z, sigma, ybar, mu0, L):
    """Distance curves when every extra-sample mean equals ``gamma``.

    ``gamma`` is ``mu_n`` for ``posterior_predictive``, ``ybar`` for
    ``bootstrap`` and ``mu0`` for ``prior``. Returns ``(W, Wt, m_n)`` with
    curves indexed by ``m = n..L``.
    """
    if L <= n:
        raise ValueError("L must exceed n")
    w_n = n / (n + z)
    mu_n = w_n * ybar + (1.0 - w_n) * mu0
    try:
        gamma = {"posterior_predictive": mu_n, "bootstrap": ybar, "prior": mu0}[mode]
    except KeyError:
        raise ValueError(f"mode must be one of {PROP1_MODES}") from None
    m = np.arange(n, L + 1, dtype=float)
    r = m - n
    W = (mu_n - (n / m) * ybar - (r / m) * gamma) ** 2 + _sd_gap(sigma, m, n + z)
    mu_cm = (n * ybar + r * gamma + z * mu0) / (m + z)
    Wt = (ybar - mu_cm) ** 2 + _sd_gap(sigma, n, m + z)
    _, m_n, _, _ = sign_and_mn(W, Wt, n)
    return W, Wt, m_n


# ---------------------------------------------------------------------------
# probability of improving on W(n) with r extra samples
# ---------------------------------------------------------------------------


def small_mopess_thresholds(r, n, z, sigma):
    """Right-hand-side offsets for ``p(r)`` and ``pt(r)``.

    ``p(r) > 0`` requires ``eps^2 + c_n^2 - c_{n+r}^2 > 0`` and
    ``pt(r) > 0`` requires ``eps^2 > ct_{n+r}^2 - c_n^2``. Returns
    ``(c_n^2 - c_{n+r}^2, ct_{n+r}^2 - c_n^2)``.
    """
    c_n2 = float(_sd_gap(sigma, n, n + z))
    c_nr2 = float(_sd_gap(sigma, n + r, n + z))
    ct_nr2 = float(_sd_gap(sigma, n, n + r + z))
    return c_n2 - c_nr2, ct_nr2 - c_n2


def _interval_prob(a, b, c, sd):
    """``P((a D + b)^2 < c)`` for ``D ~ N(0, sd^2)`` and ``a > 0``."""
    if c <= 0.0:
        return 0.0
    root = math.sqrt(c)
    lo = (-root - b) / (a * sd)
    hi = (root - b) / (a * sd)
    return max(normal_cdf(hi) - normal_cdf(lo), 0.0)


def small_mopess_probs(r, n, z, sigma, epsilon, mc=None, rng=None):
    """``(p(r), pt(r))`` for data with ``ybar = mu_n + epsilon``.

    ``p(r) = P(W(n+r) < W(n))`` and ``pt(r) = P(Wt(n+r) < W(n))`` under the
    posterior predictive, where ``mu_n - sbar_r ~ N(0, sigma^2 (1/r +
    1/(n+z)))``. Both are exactly zero when the corresponding right-hand
    side is nonpositive. Without ``mc`` the probabilities are evaluated in
    closed form; with ``mc`` they are Monte Carlo averages over ``mc``
    draws from ``rng``.
    """
    if r < 1:
        raise ValueError("r must be >= 1")
    m = n + r
    eps2 = epsilon * epsilon
    off_p, off_pt = small_mopess_thresholds(r, n, z, sigma)
    rhs_p = eps2 + off_p
    rhs_pt = eps2 - off_pt
    sd = sigma * math.sqrt(1.0 / r + 1.0 / (n + z))
    a_p, b_p = r / m, -epsilon * n / m
    a_pt, b_pt = r / (m + z), epsilon
    if mc is None:
        return _interval_prob(a_p, b_p, rhs_p, sd), _interval_prob(a_pt, b_pt, rhs_pt, sd)
    if rng is None:
        rng = np.random.default_rng()
    d = sd * rng.standard_normal(int(mc))
    p = float(np.mean((a_p * d + b_p) ** 2 < rhs_p)) if rhs_p > 0 else 0.0
    pt = float(np.mean((a_pt * d + b_pt) ** 2 < rhs_pt)) if rhs_pt > 0 else 0.0
    return p, pt


# ---------------------------------------------------------------------------
# KL diagnostics
# ---------------------------------------------------------------------------


def expected_kl_bootstrap(m, n, z, sigma, ybar, mu0, s2=0.0):
    """Expected KL(conjugate posterior at n, flat posterior at m) when the
    ``m`` pseudo-observations are resampled from ``y`` with replacement.

    ``s2`` is the plug-in variance of ``y``; it only shifts the curve.
    """
    m = np.asarray(m, dtype=float)
    w_n = n / (n + z)
    e_d = (1.0 - w_n) ** 2 * (ybar - mu0) ** 2 + s2 / m
    return 0.5 * (m / (n + z) + m * e_d / sigma**2 - 1.0 + np.log((n + z) / m))


def _kl_slope(n, z, sigma, ybar, mu0):
    return 1.0 / (n + z) + (z / (n + z)) ** 2 * (ybar - mu0) ** 2 / sigma**2


def kl_optimal_m_continuous(n, z, sigma, ybar, mu0) -> float:
    """Real minimizer ``(n+z) / (1 + z^2 (ybar-mu0)^2 / ((n+z) sigma^2))``."""
    return 1.0 / _kl_slope(n, z, sigma, ybar, mu0)


def kl_optimal_m(n, z, sigma, ybar, mu0) -> int:
    """Integer minimizer of the expected bootstrap KL over ``m >= 1``.

    The objective is ``a m - log m`` up to constants, which is convex, so
    the answer is the better of the floor and ceiling of ``1/a``. Rounding
    ``1/a`` to the nearest integer agrees except in a narrow band near
    half-integers.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    a = _kl_slope(n, z, sigma, ybar, mu0)
    x = 1.0 / a
    lo = max(1, math.floor(x))
    hi = lo + 1
    f_lo = a * lo - math.log(lo)
    f_hi = a * hi - math.log(hi)
    return hi if f_hi < f_lo else lo


def kl_w2_ratio(n, m, z, sigma, d_mn):
    """``KL / W2sq`` for the flat posterior at ``m`` against the conjugate
    posterior at ``n``, where ``d_mn`` is their squared mean gap."""
    kl = 0.5 * (m / (n + z) + m * d_mn / sigma**2 - 1.0 + math.log((n + z) / m))
    w2 = d_mn + (sigma / math.sqrt(m) - sigma / math.sqrt(n + z)) ** 2
    return kl / w2
