"""Observation impact analysis on synthetic atmospheres."""

__version__ = "0.1.0"
