"""Interactive Merlin-Arthur classification on finite data spaces and images."""

__version__ = "0.1.0"
