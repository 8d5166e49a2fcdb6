"""Insider-threat detection from enterprise activity logs with a next-key LSTM."""

__version__ = "0.1.0"
