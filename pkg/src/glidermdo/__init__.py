"""Bi-level multi-fidelity design optimization toolkit for a flying-wing underwater glider."""

__version__ = "0.1.0"
