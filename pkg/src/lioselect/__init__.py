"""LiDAR-inertial odometry over a learned ~20% point subset."""

__version__ = "0.1.0"
