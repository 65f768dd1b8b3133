"""Simulation and analysis toolkit for a magnetometer-network dark-photon search."""

__version__ = "0.1.0"
