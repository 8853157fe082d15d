"""walklab: planar bipedal walking lab (simulator, controllers, learning, transfer)."""

__version__ = "0.1.0"
