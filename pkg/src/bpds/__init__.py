"""Decision-calibrated combination of Bayesian VAR forecasts with
multi-period policy-path optimization."""

__version__ = "0.1.0"
