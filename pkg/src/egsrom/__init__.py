"""Reduced-order power models for an enhanced geothermal reservoir."""
__version__ = "0.1.0"
