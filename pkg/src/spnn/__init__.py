"""Sparsely-connected networks with LFSR-generated connection masks."""

__version__ = "0.1.0"
