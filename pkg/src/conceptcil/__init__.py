"""Concept-guided exemplar-free class-incremental learning on frozen embeddings."""

__version__ = "0.1.0"
