"""Statistical uniformity testing for SAT-solution samplers."""

__version__ = "0.1.0"
