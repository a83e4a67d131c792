"""Ordered-neurons LSTM grammar induction and parse analysis."""

__version__ = "0.1.0"
