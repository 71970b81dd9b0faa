"""HTTP embed endpoint speaking the engine's wire protocol.

POST /embed with {"items": [{"id", "text"}, ...]} returns
{"items": [{"id", "vec"}, ...]}; failures return a non-200 status with
{"error": message}, which is what the engine's client reports.
"""
from __future__ import annotations

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .embed import TextEncoder

DEFAULT_MAX_ITEMS = 256


class EmbedItem(BaseModel):
    id: str
    text: str


class EmbedBody(BaseModel):
    items: list[EmbedItem]


def build_app(encoder: TextEncoder, *, max_items: int = DEFAULT_MAX_ITEMS) -> FastAPI:
    app = FastAPI(title="golfer-extractor embed endpoint")

    @app.post("/embed")
    def embed(body: EmbedBody):
        if len(body.items) > max_items:
            return JSONResponse(status_code=413, content={
                "error": f"at most {max_items} items per request, got {len(body.items)}"})
        for item in body.items:
            if not item.text.strip():
                return JSONResponse(status_code=400, content={
                    "error": f"item {item.id!r} has empty text"})
        return {"items": [{"id": item.id, "vec": encoder.encode_one(item.text).tolist()}
                          for item in body.items]}

    return app
