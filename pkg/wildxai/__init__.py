"""Temporal feature attribution toolkit for windowed wildfire classifiers."""

__version__ = "1.0.0"
