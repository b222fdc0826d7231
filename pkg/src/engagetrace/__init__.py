"""Online Bayesian engagement modelling over Wikipedia-derived knowledge components."""

__version__ = "0.1.0"
