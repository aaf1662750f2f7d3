"""Minimal embeddings HTTP service backing text-similarity scoring."""

from .app import create_app
from .encoder import DEFAULT_MODEL, HashedTokenEncoder, load_encoder

__all__ = ["create_app", "load_encoder", "HashedTokenEncoder", "DEFAULT_MODEL"]
__version__ = "0.1.0"
