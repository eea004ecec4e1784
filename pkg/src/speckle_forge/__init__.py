"""Synthetic echocardiography with exact motion ground truth."""

__version__ = "0.1.0"
