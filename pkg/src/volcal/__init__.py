"""Piecewise-constant Heston, Bates and variance-gamma calibration to implied-volatility surfaces."""

__version__ = "0.1.0"
