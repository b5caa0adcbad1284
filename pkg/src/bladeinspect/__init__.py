"""Detection-to-report pipeline for wind-turbine blade inspection imagery."""

__version__ = "0.1.0"
