"""zcexport: instrument torch models and emit zcforge statistics datasets."""

__version__ = "0.1.0"
