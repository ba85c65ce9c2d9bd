"""Conditional stochastic-interpolant forecasting with diffusion and flow baselines."""

__version__ = "0.1.0"
