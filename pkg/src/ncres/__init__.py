"""Residues, zeta-regularised traces and heat coefficients on flat and noncommutative tori."""
from .nc_algebra import (ThetaMatrix, NCElement, MultiplierCoefficient, mul, trace_tau, derive,
                         star, invert, exp_element)

__version__ = "0.1.0"

__all__ = ["ThetaMatrix", "NCElement", "MultiplierCoefficient", "mul", "trace_tau", "derive",
           "star", "invert", "exp_element", "__version__"]
