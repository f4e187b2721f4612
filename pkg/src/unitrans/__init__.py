"""Desk-scale multi-target speech-to-unit translation lab."""

__version__ = "0.1.0"
