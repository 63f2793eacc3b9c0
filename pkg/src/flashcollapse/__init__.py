"""Stochastic collapse-model simulation with flash (collapse outcome) records."""

__version__ = "0.1.0"
