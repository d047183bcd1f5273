"""Simulation and rare-event estimation for binary branching Brownian motion."""
__version__ = "0.1.0"
