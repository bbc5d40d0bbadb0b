"""MCMC for state-space models: exact HMM machinery, single-site and block
samplers for stochastic volatility, and particle-based chain drivers."""

__version__ = "0.1.0"
