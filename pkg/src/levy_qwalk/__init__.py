"""Levy QWalk - truncated long-range discrete-time quantum walk toolkit."""

__version__ = "0.1.0"
