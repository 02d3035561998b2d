"""Pseudo-margin gated pseudo-labeling on synthetic point clouds."""

__version__ = "0.1.0"
