"""Document-image super-resolution with a five-layer CNN written in numpy."""

__version__ = "0.1.0"
