"""Annealed normalizing-flow sampling for Bayesian ODE inference.

The package trains RealNVP-style flows on a likelihood-tempered posterior
whose inverse temperature adapts to keep the importance-weight effective
sample size above a floor, then estimates the model evidence from the
trained flows by importance sampling and by thermodynamic integration.
An annealed ensemble MCMC sampler is included as a baseline.
"""

__version__ = "0.1.0"

from .annealer import (AnnealConfig, AnnealResult, SampleArchive, anneal_run,
                       archive_weights, ess, ess_from_log_weights,
                       mixture_log_density, normalized_weights, solve_beta)
from .errors import (ConfigError, DegenerateWeightsError, FlowAnnealError,
                     InputValidationError, InsufficientLadderError,
                     NonFiniteValueError, ScheduleStallError,
                     TrainingDivergedError, UndefinedEssError)
from .evidence import (EvidenceEstimate, TiLadder, WeightedSampleSet,
                       evidence_is, evidence_ti, prune_max_ess,
                       reweight_expectation, ti_ladder_from_checkpoints)
from .flow import CouplingLayer, FlowModel, MlpConditioner
from .kernels import BACKEND, repressilator_trajectory
from .mcmc import McmcConfig, McmcResult, autocorr_ess, run_annealed_ensemble
from .target import Dataset, OdePosterior, THETA_TRUE, generate_data
from .toys import (ConjugateGaussianTarget, FlatLikelihoodTarget,
                   TrimodalGaussianTarget)
from .tsit5 import IntegrationResult, tsit5_integrate

__all__ = [
    "AnnealConfig", "AnnealResult", "BACKEND", "ConfigError",
    "ConjugateGaussianTarget", "CouplingLayer", "Dataset",
    "DegenerateWeightsError", "EvidenceEstimate", "FlatLikelihoodTarget",
    "FlowAnnealError", "FlowModel", "InputValidationError",
    "InsufficientLadderError", "IntegrationResult", "McmcConfig",
    "McmcResult", "MlpConditioner", "NonFiniteValueError", "OdePosterior",
    "SampleArchive", "ScheduleStallError", "THETA_TRUE",
    "TrainingDivergedError", "TrimodalGaussianTarget", "UndefinedEssError",
    "WeightedSampleSet", "anneal_run", "archive_weights", "autocorr_ess",
    "ess", "ess_from_log_weights", "evidence_is", "evidence_ti",
    "generate_data", "mixture_log_density", "normalized_weights",
    "prune_max_ess", "repressilator_trajectory", "reweight_expectation",
    "run_annealed_ensemble", "solve_beta", "ti_ladder_from_checkpoints",
    "tsit5_integrate",
]
