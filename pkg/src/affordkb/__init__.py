"""Grasp-action affordance reasoning over a weighted knowledge-base graph."""

__version__ = "0.1.0"
