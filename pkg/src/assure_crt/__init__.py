"""Bayesian assurance and sample-size determination for two-arm cluster randomised trials."""

__version__ = "0.1.0"
