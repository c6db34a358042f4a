"""Modularized recurrent VAE for polyphonic symbolic music."""

__version__ = "0.1.0"
