"""FastAPI application implementing the token-embedding wire protocol.

POST /embed_tokens
  body     {"texts": [str, ...]}
  response {"model": str, "dim": int, "tokens": [[str, ...], ...],
            "token_embeddings": [[[float, ...], ...], ...]}
  with the outer lists aligned to the input texts and, per text,
  len(tokens[i]) == len(token_embeddings[i]).

GET /healthz -> {"status": "ok", "dim": D}

Errors: 400 malformed body, 413 text or batch too large, 503 model not
ready. Requests are independent; the only shared state is the loaded
encoder, which is read-only after startup.
"""

from __future__ import annotations

import logging
import threading

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .config import ServerConfig
from .encoders import make_encoder

logger = logging.getLogger(__name__)


def build_app(cfg: ServerConfig) -> FastAPI:
    cfg.validate()
    app = FastAPI(title="cer-embed-server")
    state = {"encoder": None, "error": None}
    load_lock = threading.Lock()

    def ensure_encoder():
        with load_lock:
            if state["encoder"] is None and state["error"] is None:
                try:
                    state["encoder"] = make_encoder(cfg)
                except Exception as exc:  # model missing/unloadable -> 503
                    logger.error("encoder load failed: %s", exc)
                    state["error"] = str(exc)
        return state["encoder"]

    @app.get("/healthz")
    def healthz():
        encoder = ensure_encoder()
        if encoder is None:
            return JSONResponse(
                status_code=503,
                content={"status": "model not ready", "detail": state["error"]},
            )
        return {"status": "ok", "dim": encoder.dim}

    @app.post("/embed_tokens")
    async def embed_tokens(request: Request):
        try:
            body = await request.json()
        except Exception:
            return JSONResponse(status_code=400, content={"detail": "body is not valid JSON"})
        if not isinstance(body, dict) or "texts" not in body:
            return JSONResponse(status_code=400, content={"detail": 'missing "texts" field'})
        texts = body["texts"]
        if not isinstance(texts, list) or any(not isinstance(t, str) for t in texts):
            return JSONResponse(
                status_code=400, content={"detail": '"texts" must be a list of strings'}
            )
        if len(texts) > cfg.max_batch:
            return JSONResponse(
                status_code=413,
                content={"detail": f"batch of {len(texts)} exceeds max_batch={cfg.max_batch}"},
            )
        for i, text in enumerate(texts):
            if len(text.encode("utf-8")) > cfg.max_text_bytes:
                return JSONResponse(
                    status_code=413,
                    content={"detail": f"texts[{i}] exceeds max_text_bytes={cfg.max_text_bytes}"},
                )
        encoder = ensure_encoder()
        if encoder is None:
            return JSONResponse(
                status_code=503,
                content={"detail": f"model not ready: {state['error']}"},
            )
        encoded = encoder.encode(texts)
        return {
            "model": encoder.model_name,
            "dim": encoder.dim,
            "tokens": [tokens for tokens, _ in encoded],
            "token_embeddings": [matrix.tolist() for _, matrix in encoded],
        }

    return app


def serve(cfg: ServerConfig) -> None:
    """Run the server until interrupted."""
    import uvicorn

    uvicorn.run(build_app(cfg), host=cfg.host, port=cfg.port, log_level="info")
