"""Deterministic toy video diffusion with anchor-frame attention controls."""

__version__ = "0.1.0"
