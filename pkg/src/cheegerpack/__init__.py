"""Spectral certificates for higher Cheeger constants on weighted grids."""

__version__ = "0.1.0"
