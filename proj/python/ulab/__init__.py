"""Gradient-mask unlearning on small classifiers (C++ core)."""

from ulab._core import (
    Activation,
    ModelSpec,
    accuracy,
    agg,
    aggregate_table,
    agree_prob,
    default_config,
    focus_vector,
    forward,
    grad,
    init_params,
    loss,
    make_blobs,
    mask_and,
    mask_bernoulli,
    mask_prob,
    mask_salun,
    normal_cdf,
    run_sweep,
)

__all__ = [
    "Activation",
    "ModelSpec",
    "accuracy",
    "agg",
    "aggregate_table",
    "agree_prob",
    "default_config",
    "focus_vector",
    "forward",
    "grad",
    "init_params",
    "loss",
    "make_blobs",
    "mask_and",
    "mask_bernoulli",
    "mask_prob",
    "mask_salun",
    "normal_cdf",
    "run_sweep",
]
