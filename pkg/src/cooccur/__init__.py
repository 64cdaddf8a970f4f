"""Region co-occurrence graph regression for multi-label image retrieval."""

__version__ = "0.1.0"
