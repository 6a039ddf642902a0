"""Discrete-event simulator of Eurotransplant-style liver allocation."""

__version__ = "0.1.0"
