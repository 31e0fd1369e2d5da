"""zcforge: evolutionary discovery of zero-cost network-scoring programs."""

__version__ = "0.1.0"
