"""Simulated HSM-cluster PIN-protected backup with forward secrecy and a public log."""

__version__ = "0.1.0"
