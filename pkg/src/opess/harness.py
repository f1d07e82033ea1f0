"""Replication studies of MOPESS across simulated datasets.

Each study simulates (or resamples) a batch of datasets, runs the MOPESS
engine on every one and returns one :class:`StudyRow` per dataset. The
trend of MOPESS against a data statistic is summarised with equal-count
bins by :func:`binned_summary`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .engine import BoundaryWarning, OpessProblem, OpessResult, mopess
from .models import (
    BetaBernoulliModelSpec,
    Dataset,
    GaussianModelSpec,
    RegressionModelSpec,
)
from .theory import PmfQuery, opess_pmf_table

__all__ = [
    "STUDY_IDS",
    "StudyConfig",
    "StudyRow",
    "Histogram",
    "ConditionalStudy",
    "SEX_RATIO_COUNTS",
    "study_config",
    "run_study",
    "run_gaussian_study",
    "run_conditional_study",
    "run_beta_study",
    "run_regression_study",
    "run_small_mopess_study",
    "binned_summary",
    "BinSummary",
    "sex_ratio_population",
    "bernoulli_dataset",
    "beta_study_datasets",
    "dataset_seed",
]

STUDY_IDS = (
    "gaussian_fig1_2",
    "gaussian_conditional_fig3",
    "beta_fig4",
    "regression_fig5_6",
    "small_mopess_appE",
)

# (ones, zeros) in the birth-sex population: 437 girls among 980 births
SEX_RATIO_COUNTS = (437, 543)

_DESK = {
    "gaussian_fig1_2": dict(n_datasets=50, S=2000),
    "gaussian_conditional_fig3": dict(n_datasets=1, S=10_000),
    "beta_fig4": dict(n_datasets=100, S=2000),
    "regression_fig5_6": dict(n_datasets=100, S=1000),
    "small_mopess_appE": dict(n_datasets=50, S=2000),
}
_PAPER = {
    "gaussian_fig1_2": dict(n_datasets=300, S=10_000),
    "gaussian_conditional_fig3": dict(n_datasets=1, S=10_000),
    "beta_fig4": dict(n_datasets=1000, S=10_000),
    "regression_fig5_6": dict(n_datasets=1000, S=10_000),
    "small_mopess_appE": dict(n_datasets=300, S=10_000),
}
_MODEL_DEFAULTS = {
    "gaussian_fig1_2": dict(sigma2=1.0, prior_mean=0.0, prior_var=0.1, true_mean=0.0),
    "gaussian_conditional_fig3": dict(sigma2=1.0, prior_mean=0.0, prior_var=0.1,
                                      ybar=0.0, mu=0.0, t_draws=10_000),
    "beta_fig4": dict(alpha=5.0, beta=5.0),
    "regression_fig5_6": dict(sigma2=1.0, eta0=(0.0, 0.0), tau1_sq=0.1, tau2_sq=0.1,
                              beta_true=(0.0, 0.0)),
    "small_mopess_appE": dict(sigma2=1.0, prior_mean=0.0, prior_var=0.25, true_mean=0.0),
}


@dataclass(frozen=True)
class StudyConfig:
    study_id: str
    n_datasets: int = 50
    S: int = 2000
    L: Optional[int] = None
    seed: int = 0
    n: int = 20
    workers: int = 1
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.study_id not in STUDY_IDS:
            raise ValueError(f"unknown study_id {self.study_id!r}; expected one of {STUDY_IDS}")
        if self.n_datasets < 1:
            raise ValueError("n_datasets must be >= 1")
        if self.S < 1 or self.n < 2:
            raise ValueError("S must be >= 1 and n >= 2")
        allowed = _MODEL_DEFAULTS[self.study_id]
        unknown = set(self.model) - set(allowed)
        if unknown:
            raise ValueError(f"unknown model override(s) for {self.study_id}: {sorted(unknown)}")
        object.__setattr__(self, "model", {**allowed, **self.model})


def study_config(study_id: str, scale: str = "desk", **overrides) -> StudyConfig:
    """Default configuration of a study at ``desk`` or ``paper`` scale."""
    table = {"desk": _DESK, "paper": _PAPER}.get(scale)
    if table is None:
        raise ValueError("scale must be 'desk' or 'paper'")
    if study_id not in STUDY_IDS:
        raise ValueError(f"unknown study_id {study_id!r}")
    return StudyConfig(study_id=study_id, **{**table[study_id], **overrides})


@dataclass(frozen=True)
class StudyRow:
    dataset_id: int
    xstat: float
    mopess: float
    q05: float
    q50: float
    q95: float
    mean_min_distance: float
    boundary_fraction: float
    extra: dict = field(default_factory=dict, compare=True)


@dataclass
class Histogram:
    values: np.ndarray
    counts: np.ndarray
    theory_pmf: Optional[np.ndarray] = None

    @property
    def frequency(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    @property
    def mean(self) -> float:
        return float(self.values @ self.frequency)

    @classmethod
    def from_result(cls, result: OpessResult, support=None) -> "Histogram":
        values, counts = result.histogram()
        if support is not None:
            support = np.asarray(support, dtype=int)
            full = np.zeros(support.size, dtype=int)
            full[np.searchsorted(support, values)] = counts
            values, counts = support, full
        return cls(values=values, counts=counts)


@dataclass
class ConditionalStudy:
    histogram: Histogram
    result: OpessResult
    ybar: float
    mu: float

    @property
    def total_variation(self) -> float:
        h = self.histogram
        return 0.5 * float(np.abs(h.frequency - h.theory_pmf).sum())

    @property
    def theory_mean(self) -> float:
        h = self.histogram
        return float(h.values @ h.theory_pmf)


# ---------------------------------------------------------------------------
# seeding and data
# ---------------------------------------------------------------------------


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def dataset_seed(seed: int, dataset_id: int) -> int:
    """Engine seed for one dataset, disjoint from the data-generation stream."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(2, int(dataset_id)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sex_ratio_population() -> np.ndarray:
    ones, zeros = SEX_RATIO_COUNTS
    return np.concatenate([np.ones(ones), np.zeros(zeros)])


def bernoulli_dataset(ybar: float, n: int = 20) -> Dataset:
    """A 0/1 dataset of size ``n`` whose mean is exactly ``ybar``."""
    s = round(ybar * n)
    if abs(s - ybar * n) > 1e-9:
        raise ValueError(f"ybar={ybar} is not attainable with n={n}")
    return Dataset(np.concatenate([np.ones(s), np.zeros(n - s)]))


def _row(dataset_id: int, xstat: float, res: OpessResult, **extra) -> StudyRow:
    return StudyRow(
        dataset_id=dataset_id,
        xstat=float(xstat),
        mopess=res.mopess,
        q05=res.quantiles[0.05],
        q50=res.quantiles[0.5],
        q95=res.quantiles[0.95],
        mean_min_distance=res.mean_min_distance,
        boundary_fraction=res.boundary_fraction,
        extra={k: float(v) for k, v in extra.items()},
    )


def _run(cfg: StudyConfig, spec, data: Dataset, dataset_id: int, theta=None) -> OpessResult:
    problem = OpessProblem(spec=spec, data=data, L=cfg.L, S=cfg.S,
                           seed=dataset_seed(cfg.seed, dataset_id), theta=theta)
    with warnings.catch_warnings():
        # boundary hits are recorded per row instead
        warnings.simplefilter("ignore", BoundaryWarning)
        return mopess(problem, workers=cfg.workers)


def _gaussian_spec(cfg: StudyConfig) -> GaussianModelSpec:
    p = cfg.model
    return GaussianModelSpec(sigma2=p["sigma2"], prior_mean=p["prior_mean"], prior_var=p["prior_var"])


def _gaussian_rows(cfg: StudyConfig):
    spec = _gaussian_spec(cfg)
    sd = np.sqrt(spec.sigma2)
    rows, results = [], {}
    for i in range(cfg.n_datasets):
        y = cfg.model["true_mean"] + sd * _rng(cfg.seed, 1, i).standard_normal(cfg.n)
        data = Dataset(y)
        res = _run(cfg, spec, data, i)
        results[i] = res
        rows.append(_row(i, data.ybar, res))
    rows.sort(key=lambda row: (row.xstat, row.dataset_id))
    return rows, results


# ---------------------------------------------------------------------------
# studies
# ---------------------------------------------------------------------------


def run_gaussian_study(cfg: StudyConfig):
    """Normal data, conjugate prior; rows sorted by the sample mean."""
    return _gaussian_rows(cfg)[0]


def run_small_mopess_study(cfg: StudyConfig):
    """The Gaussian study with a weaker prior (``z = 4`` by default).

    Returns ``(rows, histogram)`` where the histogram is of the OPESS
    realizations for the dataset whose mean is closest to zero.
    """
    rows, results = _gaussian_rows(cfg)
    closest = min(rows, key=lambda row: (abs(row.xstat), row.dataset_id))
    return rows, Histogram.from_result(results[closest.dataset_id])


def run_conditional_study(cfg: StudyConfig, ybar: Optional[float] = None,
                          mu: Optional[float] = None) -> ConditionalStudy:
    """Engine run with the generating mean fixed at ``mu``, paired with the
    theoretical conditional PMF over the same finite horizon."""
    p = cfg.model
    ybar = p["ybar"] if ybar is None else float(ybar)
    mu = p["mu"] if mu is None else float(mu)
    spec = _gaussian_spec(cfg)
    res = _run(cfg, spec, Dataset(np.full(cfg.n, ybar)), 0, theta=mu)
    R = res.L - res.n
    support = np.arange(-R, R + 1)
    hist = Histogram.from_result(res, support)
    base = PmfQuery(v=0, ybar=ybar, n=cfg.n, z=spec.z, sigma=float(np.sqrt(spec.sigma2)),
                    mu_draws=1, t_draws=int(p["t_draws"]), mu0=spec.prior_mean, mu=mu,
                    L=res.L, seed=dataset_seed(cfg.seed, 1))
    hist.theory_pmf = opess_pmf_table(base, support)
    return ConditionalStudy(histogram=hist, result=res, ybar=ybar, mu=mu)


def beta_study_datasets(cfg: StudyConfig):
    """The bootstrap resamples used by :func:`run_beta_study`, in id order."""
    pop = sex_ratio_population()
    return [Dataset(_rng(cfg.seed, 1, i).choice(pop, size=cfg.n, replace=True))
            for i in range(cfg.n_datasets)]


def run_beta_study(cfg: StudyConfig):
    """Bootstrap resamples of the birth-sex population, Beta prior."""
    spec = BetaBernoulliModelSpec(alpha=cfg.model["alpha"], beta=cfg.model["beta"])
    rows = []
    for i, data in enumerate(beta_study_datasets(cfg)):
        rows.append(_row(i, data.ybar, _run(cfg, spec, data, i)))
    rows.sort(key=lambda row: (row.xstat, row.dataset_id))
    return rows


def run_regression_study(cfg: StudyConfig):
    """Simple linear regression; ``xstat`` is ``||beta_ols - eta0||_2``."""
    p = cfg.model
    spec = RegressionModelSpec(sigma2=p["sigma2"], eta0=tuple(p["eta0"]),
                               tau1_sq=p["tau1_sq"], tau2_sq=p["tau2_sq"])
    b1, b2 = (float(v) for v in p["beta_true"])
    sd = np.sqrt(spec.sigma2)
    eta0 = np.asarray(spec.eta0)
    rows = []
    for i in range(cfg.n_datasets):
        rng = _rng(cfg.seed, 1, i)
        x = rng.standard_normal(cfg.n)
        y = b1 + b2 * x + sd * rng.standard_normal(cfg.n)
        data = Dataset(y, x)
        gap = data.stats(spec).ols() - eta0
        rows.append(_row(i, np.linalg.norm(gap), _run(cfg, spec, data, i),
                         beta1_gap=gap[0], beta2_gap=gap[1]))
    rows.sort(key=lambda row: (row.xstat, row.dataset_id))
    return rows


def run_study(cfg: StudyConfig):
    """Dispatch on ``cfg.study_id``."""
    return {
        "gaussian_fig1_2": run_gaussian_study,
        "gaussian_conditional_fig3": run_conditional_study,
        "beta_fig4": run_beta_study,
        "regression_fig5_6": run_regression_study,
        "small_mopess_appE": run_small_mopess_study,
    }[cfg.study_id](cfg)


# ---------------------------------------------------------------------------
# binned summaries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BinSummary:
    x_lo: float
    x_hi: float
    x_mean: float
    count: int
    mopess_mean: float
    q05: float
    q50: float
    q95: float


def binned_summary(rows, n_bins: int, key=None):
    """Equal-count bins of ``rows`` ordered by ``key`` (default ``xstat``).

    Bin sizes differ by at most one. Each bin reports the mean and the
    5/50/95% quantiles of MOPESS across its datasets.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    rows = list(rows)
    if not rows:
        return []
    key = key or (lambda row: row.xstat)
    rows.sort(key=key)
    x = np.array([key(row) for row in rows], dtype=float)
    y = np.array([row.mopess for row in rows], dtype=float)
    out = []
    for idx in np.array_split(np.arange(len(rows)), min(n_bins, len(rows))):
        xs, ys = x[idx], y[idx]
        q05, q50, q95 = np.quantile(ys, [0.05, 0.5, 0.95])
        out.append(BinSummary(float(xs[0]), float(xs[-1]), float(xs.mean()), int(idx.size),
                              float(ys.mean()), float(q05), float(q50), float(q95)))
    return out
