"""Diffusion-guided Trojan trigger inversion and scanning for small classifiers and detectors."""

__version__ = "0.1.0"
