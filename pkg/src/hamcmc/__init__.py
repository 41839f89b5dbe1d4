"""Stochastic-gradient MCMC with a limited-memory quasi-Newton metric.

The centerpiece sampler preconditions Langevin steps with a dense
inverse-Hessian approximation built by limited-memory BFGS from a delayed
window of the chain's own history, so the metric never depends on the state
it moves and no drift correction is needed. Baselines (SGLD, PSGLD, SGRLD, a
biased naive quasi-Newton variant), verifiable Gaussian targets, trace
diagnostics, and a simulated block-partitioned distributed matrix
factorization runner round out the package.
"""

from .diagnostics import Trace, bias_mse_curve, empirical_cov, posterior_mean_error, rmse, weighted_mean
from .lbfgs import DegenerateMetricError, LbfgsError, LbfgsMemory
from .models import (
    GaussianMFModel,
    LinearGaussianModel,
    Minibatch,
    make_correlated_gaussian,
    make_low_rank_mf,
)
from .samplers import (
    ChainAbortError,
    ChainConfig,
    ChainState,
    StepSchedule,
    hamcmc_step,
    mirror,
    naive_qn_step,
    psgld_step,
    run_chain,
    sgld_step,
    sgrld_step,
)
from .dist_sim import (
    PartitionPlan,
    WorkerState,
    build_partition,
    reduce_dots,
    run_distributed_chain,
    select_subset,
)

__version__ = "0.1.0"

__all__ = [
    "ChainAbortError",
    "ChainConfig",
    "ChainState",
    "DegenerateMetricError",
    "GaussianMFModel",
    "LbfgsError",
    "LbfgsMemory",
    "LinearGaussianModel",
    "Minibatch",
    "PartitionPlan",
    "StepSchedule",
    "Trace",
    "WorkerState",
    "bias_mse_curve",
    "build_partition",
    "empirical_cov",
    "hamcmc_step",
    "make_correlated_gaussian",
    "make_low_rank_mf",
    "mirror",
    "naive_qn_step",
    "posterior_mean_error",
    "psgld_step",
    "reduce_dots",
    "rmse",
    "run_chain",
    "run_distributed_chain",
    "select_subset",
    "sgld_step",
    "sgrld_step",
    "weighted_mean",
]
