"""Learned partitioning for self-supervised denoising of single 1D signals."""

__version__ = "0.1.0"
