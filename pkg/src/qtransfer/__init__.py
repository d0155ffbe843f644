"""Hybrid classical-quantum transfer learning: frozen classical extractor + variational circuit."""

__version__ = "0.1.0"
