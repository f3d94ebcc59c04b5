"""Nanoscale fields around an axon during an action potential."""

__version__ = "0.1.0"
