"""Spatial infection with host immunity on the integer line.

Modules: ``laws`` (laws and environments), ``tagged_engine`` and
``untagged_engine`` (the two constructions), ``frontier`` (window
diagnostics and speed), ``analytics`` (exact oracles) and ``cli``.
"""
from .laws import (Deterministic, Empirical, Environment, Geometric, PowerTail, mean, parse_law,
                   sample, sample_environment, tail)
from .trace import FrontTrace

__all__ = ["Deterministic", "Empirical", "Environment", "Geometric", "PowerTail", "FrontTrace", "mean",
           "parse_law", "sample", "sample_environment", "tail"]
__version__ = "0.1.0"
