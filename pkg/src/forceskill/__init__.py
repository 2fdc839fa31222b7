"""Adaptive impedance control, skill graphs and black-box tuning for force-sensitive insertion."""

__version__ = "0.1.0"
