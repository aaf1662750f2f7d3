"""The embeddings HTTP service.

POST /embeddings with {"model": id, "input": [texts]} returns one vector
per text, in input order, of constant dimension per model. Returns 400
for empty or oversized input and 503 until the encoder has loaded.
"""

from __future__ import annotations

import os
from contextlib import asynccontextmanager

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .encoder import DEFAULT_MODEL, load_encoder

MAX_BATCH = 256


class EmbedRequest(BaseModel):
    model: str | None = None
    input: list[str] = Field(default_factory=list)


def create_app(model_id: str | None = None) -> FastAPI:
    state = {"encoder": None, "model_id": model_id or os.environ.get("SIDECAR_MODEL", DEFAULT_MODEL)}

    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        state["encoder"] = load_encoder(state["model_id"])
        yield

    app = FastAPI(title="embed-sidecar", lifespan=lifespan)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok" if state["encoder"] is not None else "loading"}

    @app.post("/embeddings")
    def embeddings(request: EmbedRequest):
        encoder = state["encoder"]
        if encoder is None:
            raise HTTPException(status_code=503, detail="model still loading")
        if not request.input:
            raise HTTPException(status_code=400, detail="input must be a non-empty list")
        if len(request.input) > MAX_BATCH:
            raise HTTPException(status_code=400, detail=f"at most {MAX_BATCH} texts per request")
        if any(not text for text in request.input):
            raise HTTPException(status_code=400, detail="texts must be non-empty")
        if request.model and request.model != encoder.model_id:
            raise HTTPException(
                status_code=400,
                detail=f"service is loaded with {encoder.model_id!r}",
            )
        vectors = encoder.encode_batch(request.input)
        return {
            "object": "list",
            "model": encoder.model_id,
            "dim": encoder.dim,
            "data": [
                {"object": "embedding", "index": i, "embedding": vector}
                for i, vector in enumerate(vectors)
            ],
        }

    return app


def main():
    import uvicorn

    port = int(os.environ.get("SIDECAR_PORT", "8199"))
    uvicorn.run(create_app(), host="127.0.0.1", port=port)


if __name__ == "__main__":
    main()
