"""Hybrid quantum-classical adversarial augmentation for imbalanced tabular data."""

__version__ = "0.1.0"
