"""Bootstrap prediction intervals for convexified convolutional networks."""

__version__ = "0.1.0"
