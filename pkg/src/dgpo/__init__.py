"""DGPO: one latent-conditioned policy trained to find several distinct solutions to the same task."""

__version__ = "0.1.0"
