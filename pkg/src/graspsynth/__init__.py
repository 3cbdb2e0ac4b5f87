"""Deterministic parallel-jaw grasp annotation synthesis for single objects and cluttered bins."""
__version__ = "0.1.0"
