"""Tonelli-scheme simulation of semilinear stochastic differential inclusions."""

from . import coefficients, convexset, diagnostics, driver, semigroup, tonelli

__version__ = "0.1.0"
__all__ = ["coefficients", "convexset", "diagnostics", "driver", "semigroup", "tonelli"]
