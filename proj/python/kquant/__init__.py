"""Gaussian k-quantile quantization toolkit."""

from ._kquant import (
    AccumulatorOverflowError,
    ConfigError,
    DegenerateError,
    DomainError,
    ShapeError,
    ThresholdTable,
    build_threshold_table,
    linear_shift_quantize,
    log2_quantize,
    max_mac,
    normal_cdf,
    normal_pdf,
    normal_quantile,
    quantize_weights,
    run_cli,
    shift_amount,
)

__all__ = [
    "AccumulatorOverflowError",
    "ConfigError",
    "DegenerateError",
    "DomainError",
    "ShapeError",
    "ThresholdTable",
    "build_threshold_table",
    "linear_shift_quantize",
    "log2_quantize",
    "max_mac",
    "normal_cdf",
    "normal_pdf",
    "normal_quantile",
    "quantize_weights",
    "run_cli",
    "shift_amount",
]
