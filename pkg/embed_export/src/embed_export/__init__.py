"""Embedding export tool for the zest corpus layout."""

from .export import ExportError, export_embeddings, write_evec
from .hashing import hash_embed, tokens_of

__version__ = "0.1.0"
