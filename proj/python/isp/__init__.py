"""Integrated structural prompt learning on a frozen toy dual encoder."""

from ._core import (
    TrainConfig,
    alpha_bucket,
    cosine_rows,
    dct_channels,
    grad_check,
    grad_check_names,
    harmonic_mean,
    idct_channels,
    rbf_row_affinity,
    reduce_visual,
    run,
    sample_weight,
    softmax_rows,
    sym_normalize,
)

__all__ = [
    "TrainConfig",
    "alpha_bucket",
    "cosine_rows",
    "dct_channels",
    "grad_check",
    "grad_check_names",
    "harmonic_mean",
    "idct_channels",
    "rbf_row_affinity",
    "reduce_visual",
    "run",
    "sample_weight",
    "softmax_rows",
    "sym_normalize",
]
