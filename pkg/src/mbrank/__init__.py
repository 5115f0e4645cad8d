"""Moderated multivariate empirical-Bayes gene ranking for replicated
longitudinal time-course expression data."""

__version__ = "0.1.0"

from . import ebayes, errors, evaluate, matlin, simulate, stats, summaries  # noqa: F401
from .ebayes import Hyperparameters  # noqa: F401
from .stats import RankingResult, StatisticKind, rank_genes  # noqa: F401
from .summaries import ExpressionDataset, GeneSummary, NullSpec  # noqa: F401
