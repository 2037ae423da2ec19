"""Monocular visual odometry on densely tracked curvature extrema."""

__version__ = "0.1.0"
