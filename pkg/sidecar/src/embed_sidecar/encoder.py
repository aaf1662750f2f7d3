"""Sentence encoders for the sidecar.

The default encoder is a self-contained hashed token model: each
lowercased alphanumeric token is hashed (salted with the model id) to a
signed coordinate, term frequencies accumulate, and the vector is L2
normalized. It needs no downloads and is deterministic per (model, text),
which is what the similarity contract requires. If sentence-transformers
is installed and the configured model id names one of its models, that
encoder is used instead.
"""

from __future__ import annotations

import hashlib
import math
import re

_TOKEN_RE = re.compile(r"[a-z0-9]+")

DEFAULT_MODEL = "hashed-tokens-256"


class HashedTokenEncoder:
    def __init__(self, model_id: str = DEFAULT_MODEL, dim: int = 256):
        if dim < 8:
            raise ValueError("dim must be at least 8")
        self.model_id = model_id
        self.dim = dim

    def _slot(self, token: str) -> tuple[int, float]:
        digest = hashlib.sha256(f"{self.model_id}:{token}".encode("utf-8")).digest()
        index = int.from_bytes(digest[:4], "big") % self.dim
        sign = 1.0 if digest[4] % 2 == 0 else -1.0
        return index, sign

    def encode(self, text: str) -> list[float]:
        vector = [0.0] * self.dim
        for token in _TOKEN_RE.findall(text.lower()):
            index, sign = self._slot(token)
            vector[index] += sign
        norm = math.sqrt(sum(v * v for v in vector))
        if norm > 0.0:
            vector = [v / norm for v in vector]
        return vector

    def encode_batch(self, texts: list[str]) -> list[list[float]]:
        return [self.encode(t) for t in texts]


class SentenceTransformerEncoder:
    """Optional wrapper over sentence-transformers, when installed."""

    def __init__(self, model_id: str):
        from sentence_transformers import SentenceTransformer

        self.model_id = model_id
        self._model = SentenceTransformer(model_id)
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def encode_batch(self, texts: list[str]) -> list[list[float]]:
        return [vector.tolist() for vector in self._model.encode(texts)]


def load_encoder(model_id: str = DEFAULT_MODEL):
    if model_id == DEFAULT_MODEL or model_id.startswith("hashed-tokens"):
        dim = 256
        if "-" in model_id:
            tail = model_id.rsplit("-", 1)[1]
            if tail.isdigit():
                dim = int(tail)
        return HashedTokenEncoder(model_id, dim)
    try:
        return SentenceTransformerEncoder(model_id)
    except ImportError:
        raise RuntimeError(
            f"model {model_id!r} needs sentence-transformers; install it or use "
            f"the default {DEFAULT_MODEL!r}"
        )
