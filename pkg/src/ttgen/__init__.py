"""Text-to-traffic generation: conditional diffusion over road-network grids."""

__version__ = "0.1.0"
