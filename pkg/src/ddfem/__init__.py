"""Data-driven finite elements: POD bases trained on small patches, assembled into global reduced solves."""

__version__ = "0.1.0"
