"""Toy text-to-music latent diffusion with global and local text conditioning."""

__version__ = "0.1.0"
