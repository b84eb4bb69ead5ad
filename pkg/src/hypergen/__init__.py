"""Generators that sample accurate and diverse weights for a fixed target network."""

__version__ = "0.1.0"
