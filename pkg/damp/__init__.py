"""DAMP: domain-adaptive coarse-to-fine semantic parsing."""
__version__ = "1.0.0"
