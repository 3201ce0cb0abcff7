"""Particle-in-cell engine with sort-on-write tile layouts.

The compiled core lives in ``sowpic._sowpic``; everything public is
re-exported here.
"""

from ._sowpic import (
    ComparisonError,
    Config,
    ConfigError,
    Error,
    MetricError,
    Simulation,
    compare_to_reference,
    fom_node,
    metrics_csv,
    overlap_ratio,
    peak_efficiency,
    pps_cpp,
    shape_weights,
)

__all__ = [
    "ComparisonError",
    "Config",
    "ConfigError",
    "Error",
    "MetricError",
    "Simulation",
    "compare_to_reference",
    "fom_node",
    "metrics_csv",
    "overlap_ratio",
    "peak_efficiency",
    "pps_cpp",
    "shape_weights",
]
