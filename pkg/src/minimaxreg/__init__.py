"""Minimax regularization for l1-penalized least squares."""

__version__ = "0.1.0"
