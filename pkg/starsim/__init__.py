"""Secure NVM metadata persistence and crash-recovery simulator."""

__version__ = "1.0.0"
