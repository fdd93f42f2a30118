"""Variational mean-flow generative modeling with a causality-aware transformer."""

__version__ = "0.1.0"
