"""Robust controllable embeddings: learn a locally linear latent model from pixels and plan in it."""

__version__ = "0.1.0"
