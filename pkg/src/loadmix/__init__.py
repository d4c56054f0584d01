"""Clustering of electricity consumers with high-dimensional mixtures of
Gaussian regressions."""

__version__ = "0.1.0"
