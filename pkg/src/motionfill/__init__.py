"""Scene-aware motion in-betweening: synthetic data, diffusion model, metrics."""

__version__ = "0.1.0"
