"""Noise-robust multimodal emotion recognition with a guided VAE."""

__version__ = "0.1.0"
