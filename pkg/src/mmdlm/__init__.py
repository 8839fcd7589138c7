"""Markov-modulated distributed lag models.

The maximum lag of an exposure's effect on a daily response is a random
"lasting time" driven by a hidden absorbing two-state chain. This package
fits such models by marginal maximum likelihood, gives standard errors,
Wald tests and AIC, posterior summaries of the daily lasting time, and
conventional fixed-lag baselines for comparison.
"""

from mmdlm.baselines import BaselineFit, RankDeficientError, almon_dlm, monotone_dlm, ols_dlm
from mmdlm.core import (
    ModelSpec,
    ParamLayout,
    ParamVector,
    PeriodPartition,
    TimeSeriesDataset,
    Variant,
    pack_params,
    param_layout,
    period_index,
    unpack_params,
)
from mmdlm.estimation import (
    FitError,
    FitOptions,
    FitResult,
    WaldResult,
    aic,
    default_init,
    delta_rho,
    fit,
    numerical_hessian,
    wald_test,
)
from mmdlm.ingest import build_soft_weights, impute_missing, moving_average, read_series, smooth_exposure
from mmdlm.lasting import (
    Constant,
    LastingLaw,
    LogisticInTau,
    PeriodConstant,
    PeriodLogistic,
    expect_z,
    lasting_law,
    transition_prob,
)
from mmdlm.likelihood import LikelihoodContext, conditional_mean, marginal_loglik_day, total_loglik
from mmdlm.posterior import LastingPosterior, band, posterior_all, posterior_law, posterior_summaries
from mmdlm.simulation import ExposureGen, SimulationConfig, SimulationResult, replicate_seeds, simulate

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
