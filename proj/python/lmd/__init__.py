"""Python bindings for the LMD optimizer core."""

from ._lmd import (
    ConfigError,
    NumericalError,
    ShapeError,
    default_prior_median,
    init_from_default,
    init_scale_param,
    kl_equal_sigma,
    lognormal_density,
    lognormal_mean,
    lognormal_std,
    lr_schedule,
    mx,
    normalize_config,
    sample_noise,
    train,
)

__all__ = [
    "ConfigError",
    "NumericalError",
    "ShapeError",
    "default_prior_median",
    "init_from_default",
    "init_scale_param",
    "kl_equal_sigma",
    "lognormal_density",
    "lognormal_mean",
    "lognormal_std",
    "lr_schedule",
    "mx",
    "normalize_config",
    "sample_noise",
    "train",
]
