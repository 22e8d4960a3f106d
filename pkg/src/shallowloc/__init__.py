"""Passive source localisation and geoacoustic inversion in a shallow-water waveguide."""

__version__ = "0.1.0"
