"""Unsupervised domain adaptation by label propagation with cycle consistency."""

__version__ = "0.1.0"
