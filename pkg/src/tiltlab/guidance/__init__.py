from .value_models import ValueModel, fit_value_mc, fit_value_softq, log_mean_exp_backup, softq_regression_targets
from .sources import (
    AffineValueShift,
    FittedValueShift,
    MixturePosteriorShift,
    PathIntegralShift,
    TweedieShift,
    ZeroShift,
    affine_shift_from_chain,
    path_integral_grad,
    tweedie_posterior_mean,
    tweedie_value_grad,
)
from .sampling import GuidedPolicy, conditional_generate, guided_trajectory, value_weighted_sample

__all__ = [
    "ValueModel", "fit_value_mc", "fit_value_softq", "log_mean_exp_backup", "softq_regression_targets",
    "AffineValueShift", "FittedValueShift", "MixturePosteriorShift", "PathIntegralShift",
    "TweedieShift", "ZeroShift", "affine_shift_from_chain", "path_integral_grad",
    "tweedie_posterior_mean", "tweedie_value_grad",
    "GuidedPolicy", "conditional_generate", "guided_trajectory", "value_weighted_sample",
]
