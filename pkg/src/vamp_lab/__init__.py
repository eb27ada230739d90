"""Vector AMP, AMP and their state-evolution predictors for y = A x0 + w."""

__version__ = "0.1.0"

from .algorithms import (
    AlgorithmTrace,
    IterationRecord,
    SolverOptions,
    amp_run,
    cold_start_gamma,
    g2_divergence,
    g2_lmmse,
    ist_run,
    vamp_lmmse_run,
    vamp_svd_run,
)
from .denoisers import BgMmse, SoftThreshold, denoise, empirical_divergence, prior_second_moment
from .estimators import AMPRegressor, ISTRegressor, VAMPRegressor
from .matgen import (
    BgPrior,
    ProblemInstance,
    geometric_spectrum,
    haar_orthogonal,
    sample_bg_signal,
    synthesize_problem,
)
from .state_evolution import (
    ReplicaSolution,
    SeTrace,
    SpectralDistribution,
    error_fn_denoiser,
    error_fn_lmmse,
    r_transform,
    replica_solve,
    se_matched_run,
    se_run,
    sens_fn_denoiser,
    sens_fn_lmmse,
    stieltjes,
)

__all__ = [
    "AlgorithmTrace",
    "amp_run",
    "AMPRegressor",
    "BgMmse",
    "BgPrior",
    "cold_start_gamma",
    "denoise",
    "empirical_divergence",
    "error_fn_denoiser",
    "error_fn_lmmse",
    "g2_divergence",
    "g2_lmmse",
    "geometric_spectrum",
    "haar_orthogonal",
    "ist_run",
    "ISTRegressor",
    "IterationRecord",
    "prior_second_moment",
    "ProblemInstance",
    "r_transform",
    "replica_solve",
    "ReplicaSolution",
    "sample_bg_signal",
    "se_matched_run",
    "se_run",
    "sens_fn_denoiser",
    "sens_fn_lmmse",
    "SeTrace",
    "SoftThreshold",
    "SolverOptions",
    "SpectralDistribution",
    "stieltjes",
    "synthesize_problem",
    "vamp_lmmse_run",
    "vamp_svd_run",
    "VAMPRegressor",
]
