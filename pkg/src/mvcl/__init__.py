"""Interaction-focused legal case matching with multi-view contrastive training."""

__version__ = "0.1.0"
