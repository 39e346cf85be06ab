"""Stochastic value-mixing multi-agent RL with graph-filtered critics."""

__version__ = "0.1.0"
