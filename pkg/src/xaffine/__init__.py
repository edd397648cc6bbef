"""Feature matching for image pairs under large viewpoint changes."""

__version__ = "0.1.0"
