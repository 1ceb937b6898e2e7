"""Glauber dynamics and Gibbs measures for spin systems on complete b-ary trees."""

__version__ = "0.1.0"
