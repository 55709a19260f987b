"""Toolkit for condition-aligned synthetic camera-effect data, a toy
diffusion-transformer with LoRA + conditional adapter training, and
drift / spectral diagnostics for the adapted weights."""

__version__ = "0.1.0"
