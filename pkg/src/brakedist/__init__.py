"""Per-driver brake response time distribution estimation.

Workflow: fit a population mixed-effects model of log response times on
multi-driver training data (``training.fit``), then, as events arrive
for one driver, predict that driver's coefficient offsets
(``driver.compute_blup``) and read the lognormal distribution of
potential response times at a short reference headway
(``pbrt.estimate_pbrt``). ``simgen`` provides the synthetic stand-in
for the training study and ``cli`` the command-line pipeline.
"""

from .driver import BlupResult, DriverMismatch, DriverState, add_observation, compute_blup
from .model import (
    ModelSpec,
    Observation,
    StimulusRegistry,
    StimulusType,
    TrainedModel,
    UnknownStimulus,
    build_design,
    feature_row,
)
from .numerics import NotPositiveDefinite, generalized_inverse, is_psd, log_det_spd, spd_solve
from .pbrt import InvalidQuantile, PbrtEstimate, density_curve, estimate_pbrt, norm_quantile, percentile
from .simgen import SimConfig, default_config, generate
from .training import (
    FitOptions,
    TrainingSet,
    VarianceParams,
    fit,
    gls_beta,
    load_model,
    log_likelihood,
    marginal_cov,
    save_model,
)

__version__ = "0.1.0"

__all__ = [
    "BlupResult",
    "DriverMismatch",
    "DriverState",
    "FitOptions",
    "InvalidQuantile",
    "ModelSpec",
    "NotPositiveDefinite",
    "Observation",
    "PbrtEstimate",
    "SimConfig",
    "StimulusRegistry",
    "StimulusType",
    "TrainedModel",
    "TrainingSet",
    "UnknownStimulus",
    "VarianceParams",
    "add_observation",
    "build_design",
    "compute_blup",
    "default_config",
    "density_curve",
    "estimate_pbrt",
    "feature_row",
    "fit",
    "generalized_inverse",
    "generate",
    "gls_beta",
    "is_psd",
    "load_model",
    "log_det_spd",
    "log_likelihood",
    "marginal_cov",
    "norm_quantile",
    "percentile",
    "save_model",
    "spd_solve",
]
