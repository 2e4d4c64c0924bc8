"""Federated privacy sandbox: DP t-tests and DP-SGD under three privacy scenarios."""

__version__ = "0.1.0"
