"""Compositional control barrier certificates for networks under omega-regular specifications."""

__version__ = "0.1.0"
