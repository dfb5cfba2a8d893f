"""Desk-scale check-in sequence model with prompt-pool reprogramming."""

__version__ = "0.1.0"
