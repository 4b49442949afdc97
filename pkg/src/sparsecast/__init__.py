"""Probabilistic time-series forecasting with convolutional and log-sparse
causal self-attention, plus tooling to analyze the attention patterns."""

__version__ = "0.1.0"
