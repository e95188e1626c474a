"""Graph and ensemble classifiers for illicit-transaction detection on Elliptic-format data."""

__version__ = "0.1.0"
