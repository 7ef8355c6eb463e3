"""bitmend: metadata-conditioned restoration of compressed video."""

__version__ = "0.1.0"
