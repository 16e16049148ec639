"""Semidiscrete optimal transport: dual solver, limit laws and inference."""

__version__ = "0.1.0"
