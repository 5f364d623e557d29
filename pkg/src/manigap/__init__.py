"""Generalization gaps of graph neural networks on graphs sampled from manifolds."""

__version__ = "0.1.0"
