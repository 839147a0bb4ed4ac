"""Kinetic mean field games on a periodic-in-x, truncated-in-v phase grid."""
__version__ = "0.1.0"
