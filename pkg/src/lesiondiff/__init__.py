"""Noise-to-box lesion detection with diffusion-style box refinement."""

__version__ = "0.1.0"
