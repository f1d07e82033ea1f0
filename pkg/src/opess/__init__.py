"""Observed prior effective sample size (OPESS) for conjugate Bayesian models.

The mean OPESS (MOPESS) measures how many observations a prior is worth
*given the data at hand*: it is the number of hypothetical extra samples a
flat-prior analyst would need before their posterior matches ours, averaged
over posterior-predictive draws of those samples.
"""

__version__ = "0.1.0"

from .models import (  # noqa: E402
    BetaBernoulliModelSpec,
    Dataset,
    GaussianModelSpec,
    RegressionModelSpec,
)
from .engine import OpessProblem, OpessResult, mopess  # noqa: E402
from .estimators import BetaBernoulliOPESS, GaussianOPESS, RegressionOPESS  # noqa: E402

__all__ = [
    "__version__",
    "GaussianModelSpec",
    "BetaBernoulliModelSpec",
    "RegressionModelSpec",
    "Dataset",
    "OpessProblem",
    "OpessResult",
    "mopess",
    "GaussianOPESS",
    "BetaBernoulliOPESS",
    "RegressionOPESS",
]
