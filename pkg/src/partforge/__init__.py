"""partforge: retrieval-augmented part-structured 3D generation and editing."""

__version__ = "0.1.0"
