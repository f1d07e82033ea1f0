"""scikit-learn style front end.

Each estimator holds prior hyperparameters and Monte Carlo settings as
constructor arguments; ``fit`` runs the MOPESS computation on the supplied
data and stores the results in trailing-underscore attributes::

    est = GaussianOPESS(prior_var=0.1, S=2000, random_state=0).fit(y)
    est.mopess_, est.quantiles_
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_count, check_observations, check_positive, check_regression_data
from .engine import OpessProblem, mopess
from .models import BetaBernoulliModelSpec, Dataset, GaussianModelSpec, RegressionModelSpec

__all__ = ["GaussianOPESS", "BetaBernoulliOPESS", "RegressionOPESS"]


class _OPESSBase(BaseEstimator):
    def _check_engine_params(self):
        check_count(self.S, "S")
        check_count(self.n_jobs, "n_jobs")
        check_count(self.L, "L", min_val=2, allow_none=True)
        check_count(self.random_state, "random_state", min_val=0)

    def _fit_dataset(self, spec, data: Dataset):
        self._check_engine_params()
        problem = OpessProblem(spec=spec, data=data, L=self.L, S=self.S, seed=self.random_state)
        res = mopess(problem, workers=self.n_jobs)
        self.result_ = res
        self.mopess_ = res.mopess
        self.quantiles_ = dict(res.quantiles)
        self.pmf_ = dict(res.pmf)
        self.mean_min_distance_ = res.mean_min_distance
        self.boundary_fraction_ = res.boundary_fraction
        self.nominal_epss_ = spec.nominal_epss
        self.L_ = res.L
        self.n_samples_fit_ = data.n
        return self

    def summary(self) -> dict:
        check_is_fitted(self, "mopess_")
        return {
            "mopess": self.mopess_,
            "nominal_epss": self.nominal_epss_,
            "q05": self.quantiles_[0.05],
            "q50": self.quantiles_[0.5],
            "q95": self.quantiles_[0.95],
            "boundary_fraction": self.boundary_fraction_,
        }


class GaussianOPESS(_OPESSBase):
    """MOPESS of a normal prior on a normal mean with known variance.

    Parameters
    ----------
    sigma2 : float
        Known sampling variance.
    prior_mean, prior_var : float
        Prior ``N(prior_mean, prior_var)`` on the mean.
    L : int or None
        Largest expanded sample size considered; defaults to
        ``n + max(10 * ceil(z), 50)`` with ``z = sigma2 / prior_var``.
    S : int
        Number of Monte Carlo realizations.
    random_state : int
    n_jobs : int
        Worker threads; results do not depend on it.
    """

    def __init__(self, sigma2=1.0, prior_mean=0.0, prior_var=0.1, L=None, S=2000,
                 random_state=0, n_jobs=1):
        self.sigma2 = sigma2
        self.prior_mean = prior_mean
        self.prior_var = prior_var
        self.L = L
        self.S = S
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        """Fit on observations ``X`` (1-d, or one column)."""
        obs = check_observations(X)
        spec = GaussianModelSpec(
            sigma2=float(check_positive(self.sigma2, "sigma2")),
            prior_mean=float(self.prior_mean),
            prior_var=float(check_positive(self.prior_var, "prior_var")),
        )
        return self._fit_dataset(spec, Dataset(obs))


class BetaBernoulliOPESS(_OPESSBase):
    """MOPESS of a ``Beta(alpha, beta)`` prior against the uniform prior
    for 0/1 data."""

    def __init__(self, alpha=5.0, beta=5.0, L=None, S=2000, random_state=0, n_jobs=1):
        self.alpha = alpha
        self.beta = beta
        self.L = L
        self.S = S
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        obs = check_observations(X, binary=True)
        spec = BetaBernoulliModelSpec(alpha=float(check_positive(self.alpha, "alpha")),
                                      beta=float(check_positive(self.beta, "beta")))
        return self._fit_dataset(spec, Dataset(obs))


class RegressionOPESS(_OPESSBase):
    """MOPESS of independent normal priors on intercept and slope of a
    simple linear regression with known noise variance."""

    def __init__(self, sigma2=1.0, eta0=(0.0, 0.0), tau1_sq=0.1, tau2_sq=0.1, L=None, S=1000,
                 random_state=0, n_jobs=1):
        self.sigma2 = sigma2
        self.eta0 = eta0
        self.tau1_sq = tau1_sq
        self.tau2_sq = tau2_sq
        self.L = L
        self.S = S
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y):
        """Fit on a single covariate column ``X`` and responses ``y``."""
        x, yy = check_regression_data(X, y)
        eta0 = np.asarray(self.eta0, dtype=float)
        if eta0.shape != (2,):
            raise ValueError("eta0 must have two entries")
        spec = RegressionModelSpec(
            sigma2=float(check_positive(self.sigma2, "sigma2")),
            eta0=tuple(eta0),
            tau1_sq=float(check_positive(self.tau1_sq, "tau1_sq")),
            tau2_sq=float(check_positive(self.tau2_sq, "tau2_sq")),
        )
        self._fit_dataset(spec, Dataset(yy, x))
        self.coef_ols_ = Dataset(yy, x).stats(spec).ols()
        return self
