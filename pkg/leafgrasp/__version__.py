"""Current version of the leafgrasp package."""

__version__ = "0.1.0"
