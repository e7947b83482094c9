"""Pilot-wave trajectories for entangled particle pairs."""

__version__ = "0.1.0"
