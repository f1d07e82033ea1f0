"""Closed-form distance laws, the OPESS pmf and the deterministic oracles
for the Gaussian conjugate model.

Distance laws are checked against direct simulation of the sufficient
statistic ``sbar_r`` (the mean of ``r`` extra draws), which never touches
the noncentral chi-square parametrisation under test.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from opess.engine import sign_and_mn
from opess.theory import (
    PROP1_MODES,
    PmfQuery,
    cond_dist_params,
    cond_distance_sample,
    expected_kl_bootstrap,
    kl_optimal_m,
    kl_optimal_m_continuous,
    kl_w2_ratio,
    marginal_dist_params,
    opess_pmf,
    opess_pmf_table,
    prop1_curves,
    small_mopess_probs,
    small_mopess_thresholds,
    truncation_bounds,
)


def simulate_distances(m, n, z, sigma, ybar, mu0, mu, rng, size):
    """``W(m)`` and ``Wt(m)`` computed from simulated extra-sample means.

    ``mu=None`` draws the generating mean from the conjugate posterior.
    """
    r = m - n
    w_n = n / (n + z)
    mu_n = w_n * ybar + (1 - w_n) * mu0
    if mu is None:
        mu = mu_n + sigma / math.sqrt(n + z) * rng.standard_normal(size)
    sbar = mu + sigma / math.sqrt(r) * rng.standard_normal(size)
    xbar_m = (n * ybar + r * sbar) / m
    W = (mu_n - xbar_m) ** 2 + (sigma / math.sqrt(m) - sigma / math.sqrt(n + z)) ** 2
    sbar2 = mu + sigma / math.sqrt(r) * rng.standard_normal(size)
    mu_cm = (n * ybar + r * sbar2 + z * mu0) / (m + z)
    Wt = (ybar - mu_cm) ** 2 + (sigma / math.sqrt(n) - sigma / math.sqrt(m + z)) ** 2
    return W, Wt


def ks_stat(sample, cdf):
    x = np.sort(sample)
    ecdf = np.arange(1, x.size + 1) / x.size
    return np.max(np.abs(ecdf - cdf(x)))


class TestConditionalParams:
    def test_matched_sd(self):
        assert cond_dist_params(30, 20, 10.0, 1.0, 0.4, -0.2).c_m2 == pytest.approx(0.0, abs=1e-18)

    def test_central_when_all_agree(self):
        p = cond_dist_params(27, 20, 10.0, 1.0, 0.3, 0.3, mu0=0.3)
        assert p.lambda_m == pytest.approx(0.0, abs=1e-30) and p.delta_m == pytest.approx(0.0, abs=1e-30)

    def test_tau(self):
        assert cond_dist_params(25, 20, 10.0, 1.0, 0.0, 0.0).tau_m == pytest.approx(0.008)

    def test_m_must_exceed_n(self):
        with pytest.raises(ValueError):
            cond_dist_params(20, 20, 10.0, 1.0, 0.0, 0.0)

    def test_kappa_bound(self):
        p = cond_dist_params(33, 20, 10.0, 1.3, 0.2, 0.1)
        assert p.kappa_m <= p.tau_m
        assert p.kappa_m == pytest.approx((33 / 43) ** 2 * p.tau_m)

    @pytest.mark.parametrize("m,ybar,mu", [(21, 0.0, 0.0), (26, 0.45, 0.45), (40, 0.3, -0.1),
                                           (90, -0.5, 0.2)])
    def test_law_matches_simulation(self, m, ybar, mu):
        n, z, sigma, mu0 = 20, 10.0, 1.0, 0.0
        p = cond_dist_params(m, n, z, sigma, ybar, mu, mu0)
        W, Wt = simulate_distances(m, n, z, sigma, ybar, mu0, mu, np.random.default_rng(m), 50_000)
        cdf_p = lambda x: stats.ncx2.cdf((x - p.c_m2) / p.tau_m, 1, p.lambda_m / p.tau_m)
        cdf_m = lambda x: stats.ncx2.cdf((x - p.ct_m2) / p.kappa_m, 1, p.delta_m / p.kappa_m)
        assert ks_stat(W, cdf_p) < 0.01
        assert ks_stat(Wt, cdf_m) < 0.01


class TestConditionalSampler:
    P = cond_dist_params(25, 20, 10.0, 1.0, 0.3, 0.1)

    def test_forced_zero(self):
        p = cond_dist_params(25, 20, 10.0, 1.0, 0.0, 0.0)
        assert cond_distance_sample(p, "primary", None, z=0.0) == pytest.approx(p.c_m2)

    def test_mean(self):
        draws = cond_distance_sample(self.P, "primary", np.random.default_rng(0), size=100_000)
        expect = self.P.tau_m + self.P.lambda_m + self.P.c_m2
        assert abs(draws.mean() / expect - 1) < 0.01

    def test_support(self):
        rng = np.random.default_rng(1)
        assert cond_distance_sample(self.P, "primary", rng, size=10_000).min() >= self.P.c_m2
        assert cond_distance_sample(self.P, "mirror", rng, size=10_000).min() >= self.P.ct_m2

    def test_branches_independent(self):
        ss = np.random.SeedSequence(4).spawn(2)
        a = cond_distance_sample(self.P, "primary", np.random.default_rng(ss[0]), size=100_000)
        b = cond_distance_sample(self.P, "mirror", np.random.default_rng(ss[1]), size=100_000)
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.01

    def test_unknown_branch(self):
        with pytest.raises(ValueError):
            cond_distance_sample(self.P, "left", np.random.default_rng(0))


class TestMarginalParams:
    def test_no_discrepancy(self):
        p = marginal_dist_params(25, 20, 10.0, 1.0, 0.0)
        assert p.lam == 0.0 and p.delta == 0.0

    def test_lambda_value(self):
        assert marginal_dist_params(30, 20, 10.0, 1.0, 0.3).lam == pytest.approx(4.0)

    def test_large_m_limit(self):
        p = marginal_dist_params(10**6, 20, 10.0, 1.0, 0.0)
        assert p.tau_m == pytest.approx(1 / 30, rel=1e-4)

    def test_delta_relation(self):
        p = marginal_dist_params(31, 20, 10.0, 1.0, 0.7, mu0=0.1)
        assert p.delta == pytest.approx(p.lam / 400)

    @pytest.mark.parametrize("m,ybar", [(24, 0.0), (35, 0.6), (60, -0.4)])
    def test_law_matches_simulation(self, m, ybar):
        n, z, sigma = 20, 10.0, 1.0
        p = marginal_dist_params(m, n, z, sigma, ybar)
        W, Wt = simulate_distances(m, n, z, sigma, ybar, 0.0, None, np.random.default_rng(m), 50_000)
        c2 = (1 / math.sqrt(m) - 1 / math.sqrt(n + z)) ** 2
        ct2 = (1 / math.sqrt(n) - 1 / math.sqrt(m + z)) ** 2
        nc_p = p.lam / (m**2 * p.tau_m)
        cdf_p = lambda x: stats.ncx2.cdf((x - c2) / p.tau_m, 1, nc_p)
        cdf_m = lambda x: stats.ncx2.cdf((x - ct2) / p.kappa_m, 1, p.delta / p.kappa_m)
        assert ks_stat(W, cdf_p) < 0.01
        assert ks_stat(Wt, cdf_m) < 0.01


def brute_bounds(t, n, z, sigma):
    if t > sigma**2 / (n + z):
        return math.inf, math.inf
    M = next(m for m in range(math.ceil(n + z), 10**7)
             if (sigma / math.sqrt(m) - sigma / math.sqrt(n + z)) ** 2 > t)
    Mt = next(m for m in range(n + 1, 10**7)
              if (sigma / math.sqrt(n) - sigma / math.sqrt(m + z)) ** 2 > t)
    return M, Mt


class TestTruncationBounds:
    def test_examples(self):
        assert truncation_bounds(0.001, 20, 10.0, 1.0) == (44, 21)

    def test_infinite_above_cap(self):
        assert truncation_bounds(1 / 30 + 1e-9, 20, 10.0, 1.0) == (math.inf, math.inf)

    def test_negative_t(self):
        with pytest.raises(ValueError):
            truncation_bounds(-1.0, 20, 10.0, 1.0)

    @settings(max_examples=150)
    @given(st.integers(1, 60), st.floats(0.5, 30), st.floats(0.3, 3), st.floats(1e-6, 0.9))
    def test_matches_brute_force(self, n, z, sigma, frac):
        # keep t inside the range where the mirror bound stays finite
        cap = min(sigma**2 / (n + z), (sigma / math.sqrt(n)) ** 2)
        t = frac * frac * cap * 0.25
        assert truncation_bounds(t, n, z, sigma) == brute_bounds(t, n, z, sigma)


def brute_force_pmf(n, z, sigma, ybar, mu, L, S, seed, mu0=0.0):
    """Empirical OPESS pmf from independent exact draws of every distance."""
    rng = np.random.default_rng(seed)
    W = np.empty((S, L - n + 1))
    Wt = np.empty((S, L - n + 1))
    w_n = n / (n + z)
    mu_n = w_n * ybar + (1 - w_n) * mu0
    W[:, 0] = Wt[:, 0] = (ybar - mu_n) ** 2 + (sigma / math.sqrt(n) - sigma / math.sqrt(n + z)) ** 2
    for m in range(n + 1, L + 1):
        W[:, m - n], Wt[:, m - n] = simulate_distances(m, n, z, sigma, ybar, mu0, mu, rng, S)
    values = np.array([sign_and_mn(W[i], Wt[i], n)[1] for i in range(S)])
    return {v: np.mean(values == v) for v in range(-(L - n), L - n + 1)}


class TestOpessPmf:
    def test_zero_when_start_exceeds_cap(self):
        q = PmfQuery(v=0, ybar=1.0, n=20, z=10.0, mu_draws=20, t_draws=20)
        assert q.w_at_n > 1 / 30
        assert opess_pmf(q) == 0.0

    def test_outside_finite_horizon(self):
        assert opess_pmf(PmfQuery(v=50, ybar=0.0, n=20, z=10.0, L=40)) == 0.0

    def test_query_validation(self):
        with pytest.raises(ValueError):
            PmfQuery(v=0, ybar=0.0, n=20, z=10.0, mu_draws=0)
        with pytest.raises(ValueError):
            PmfQuery(v=0, ybar=0.0, n=20, z=10.0, L=20)

    def test_deterministic(self):
        q = PmfQuery(v=3, ybar=0.2, n=20, z=10.0, mu_draws=30, t_draws=30, L=40, seed=5)
        assert opess_pmf(q) == opess_pmf(q)

    def test_sums_to_one(self):
        base = PmfQuery(v=0, ybar=0.1, n=20, z=10.0, mu_draws=60, t_draws=200, L=45, seed=1)
        values = range(-25, 26)
        total = opess_pmf_table(base, values).sum()
        assert abs(total - 1.0) < 0.02

    @pytest.mark.parametrize("ybar,mu", [(0.0, 0.0), (0.3, 0.1)])
    def test_matches_brute_force_short_horizon(self, ybar, mu):
        n, z, L = 20, 10.0, 26
        emp = brute_force_pmf(n, z, 1.0, ybar, mu, L, S=40_000, seed=3)
        base = PmfQuery(v=0, ybar=ybar, n=n, z=z, mu=mu, mu_draws=1, t_draws=40_000, L=L, seed=2)
        theory = opess_pmf_table(base, range(-(L - n), L - n + 1))
        np.testing.assert_allclose(theory, [emp[v] for v in range(-(L - n), L - n + 1)], atol=0.01)

    def test_infinite_horizon_matches_long_finite_horizon(self):
        # the truncation bounds make the infinite product finite
        kw = dict(ybar=0.0, n=20, z=10.0, mu=0.0, mu_draws=1, t_draws=3000, seed=4)
        for v in (0, 5, 10):
            inf = opess_pmf(PmfQuery(v=v, **kw))
            fin = opess_pmf(PmfQuery(v=v, L=2000, **kw))
            assert abs(inf - fin) < 0.01


class TestProp1Curves:
    def test_prior_mode(self):
        assert prop1_curves("prior", 20, 10.0, 1.0, 0.8, 0.0, 400)[2] == 10

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            prop1_curves("oracle", 20, 10.0, 1.0, 0.0, 0.0, 50)

    def test_curves_share_start(self):
        for mode in PROP1_MODES:
            W, Wt, _ = prop1_curves(mode, 20, 10.0, 1.0, 0.5, 0.1, 60)
            assert W[0] == Wt[0]

    @given(st.integers(2, 80), st.floats(0.5, 40), st.floats(-2, 2), st.floats(-2, 2))
    def test_mirror_larger_under_posterior_predictive(self, n, z, ybar, mu0):
        W, Wt, m_n = prop1_curves("posterior_predictive", n, z, 1.0, ybar, mu0, n + 200)
        assert np.all(Wt[1:] > W[1:] - 1e-15)
        assert m_n >= 0


class TestSmallMopess:
    def test_threshold_values(self):
        off_p, off_pt = small_mopess_thresholds(1, 20, 4.0, 1.0)
        c2 = lambda a, b: (1 / math.sqrt(a) - 1 / math.sqrt(b)) ** 2
        assert off_pt == pytest.approx(c2(20, 25) - c2(20, 24), rel=1e-12)
        assert off_p == pytest.approx(c2(20, 24) - c2(21, 24), rel=1e-12)

    def test_mirror_zero_for_tiny_offset(self):
        assert small_mopess_probs(2, 20, 4.0, 1.0, 1e-5)[1] == 0.0

    def test_mirror_positive_above_threshold(self):
        thr = small_mopess_thresholds(1, 20, 4.0, 1.0)[1]
        assert small_mopess_probs(1, 20, 4.0, 1.0, math.sqrt(thr * 1.01))[1] > 0
        assert small_mopess_probs(1, 20, 4.0, 1.0, math.sqrt(thr * 0.99))[1] == 0

    def test_primary_zero_beyond_rhat(self):
        eps = 0.01
        rhs = [eps**2 + small_mopess_thresholds(r, 20, 4.0, 1.0)[0] for r in range(1, 40)]
        r_hat = max(r for r, v in zip(range(1, 40), rhs) if v > 0)
        assert small_mopess_probs(r_hat, 20, 4.0, 1.0, eps)[0] > 0
        assert small_mopess_probs(r_hat + 1, 20, 4.0, 1.0, eps)[0] == 0

    def test_closed_form_matches_monte_carlo(self):
        rng = np.random.default_rng(0)
        for r, eps in [(1, 0.02), (3, 0.05), (2, 0.2)]:
            exact = small_mopess_probs(r, 20, 4.0, 1.0, eps)
            mc = small_mopess_probs(r, 20, 4.0, 1.0, eps, mc=200_000, rng=rng)
            np.testing.assert_allclose(mc, exact, atol=0.005)

    def test_closed_form_matches_distance_simulation(self):
        n, z, r, eps = 20, 4.0, 2, 0.05
        # with mu0 = 0 this ybar puts the posterior mean exactly eps below it
        ybar = eps * (n + z) / z
        mu_n = n / (n + z) * ybar
        assert ybar - mu_n == pytest.approx(eps)
        W, Wt = simulate_distances(n + r, n, z, 1.0, ybar, 0.0, None, np.random.default_rng(1), 400_000)
        w_n = (ybar - mu_n) ** 2 + (1 / math.sqrt(n) - 1 / math.sqrt(n + z)) ** 2
        p, pt = small_mopess_probs(r, n, z, 1.0, eps)
        assert abs(np.mean(W < w_n) - p) < 0.005
        assert abs(np.mean(Wt < w_n) - pt) < 0.005

    def test_r_must_be_positive(self):
        with pytest.raises(ValueError):
            small_mopess_probs(0, 20, 4.0, 1.0, 0.1)


class TestKLDiagnostics:
    def test_no_discrepancy(self):
        assert kl_optimal_m(20, 10.0, 1.0, 0.3, 0.3) == 30

    def test_threshold_case(self):
        ybar = math.sqrt(1 / 20 + 1 / 10)
        assert kl_optimal_m_continuous(20, 10.0, 1.0, ybar, 0.0) == pytest.approx(20)
        assert kl_optimal_m(20, 10.0, 1.0, ybar, 0.0) == 20

    @settings(max_examples=100)
    @given(st.integers(1, 80), st.floats(0.2, 40), st.floats(0.3, 3), st.floats(-3, 3), st.floats(-3, 3))
    def test_matches_brute_force(self, n, z, sigma, ybar, mu0):
        grid = np.arange(1, int(10 * (n + z)) + 1)
        brute = int(grid[np.argmin(expected_kl_bootstrap(grid, n, z, sigma, ybar, mu0))])
        assert kl_optimal_m(n, z, sigma, ybar, mu0) == brute

    @given(st.integers(1, 100), st.integers(1, 400), st.floats(0, 40), st.floats(0.3, 3),
           st.floats(1e-4, 4))
    def test_ratio_bound(self, n, m, z, sigma, d):
        assert kl_w2_ratio(n, m, z, sigma, d) >= m / (2 * sigma**2) * (1 - 1e-12)

    @given(st.integers(1, 100), st.integers(0, 40), st.floats(0.3, 3), st.floats(1e-4, 4))
    def test_ratio_equality_at_matched_size(self, n, z, sigma, d):
        m = n + z
        assert abs(kl_w2_ratio(n, m, z, sigma, d) - m / (2 * sigma**2)) < 1e-9 * max(1, m)
