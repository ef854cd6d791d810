"""Distributed day-ahead local energy market clearing on radial feeders."""

__version__ = "0.1.0"
