"""Generative hyper-network uncertainty quantification for learned operators."""

__version__ = "0.1.0"
