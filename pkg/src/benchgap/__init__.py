"""Diagnostics for reasoning benchmarks: oracle performance gap, stratified
splits, distribution and counterfactual stress tests."""

__version__ = "0.1.0"

from .errors import BenchgapError

__all__ = ["BenchgapError", "__version__"]
