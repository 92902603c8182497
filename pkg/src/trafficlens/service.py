"""HTTP service for the operator console.

POST /captures (multipart pcap) -> {session_id, skipped}
GET  /sessions -> retained session index
POST /sessions/{id}/query {question, mode} -> answer record + evidence bundle
GET  /sessions/{id}/report -> enriched report text
GET  /healthz -> 200
"""

from __future__ import annotations

import hashlib
import tempfile
from pathlib import Path

from fastapi import FastAPI, HTTPException, UploadFile
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel

from . import corpus
from .errors import (
    ChatUnavailable,
    EmbedderUnavailable,
    EmptyIndex,
    NotAPcap,
    RerankerUnavailable,
    SearchUnavailable,
    SessionNotFound,
    TruncatedCapture,
)
from .pipeline import ServiceConfig, build_clients, process_capture, query_session, report_text


class QueryBody(BaseModel):
    question: str
    mode: str = "hybrid"


_UNAVAILABLE = {
    EmbedderUnavailable: "embedder",
    ChatUnavailable: "chat",
    RerankerUnavailable: "reranker",
    SearchUnavailable: "search",
}


def create_app(config: ServiceConfig) -> FastAPI:
    app = FastAPI(title="trafficlens", version="0.1.0")
    clients = build_clients(config)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/captures")
    async def upload_capture(file: UploadFile):
        config.data_dir.mkdir(parents=True, exist_ok=True)
        hasher = hashlib.sha256()
        size = 0
        with tempfile.NamedTemporaryFile(dir=config.data_dir, suffix=".pcap",
                                         delete=False) as tmp:
            tmp_path = Path(tmp.name)
            while True:
                block = await file.read(1 << 20)
                if not block:
                    break
                size += len(block)
                if size > config.upload_cap_bytes:
                    tmp_path.unlink(missing_ok=True)
                    raise HTTPException(status_code=400, detail="upload exceeds size cap")
                hasher.update(block)
                tmp.write(block)
        try:
            upload_dir = config.data_dir / "uploads"
            upload_dir.mkdir(parents=True, exist_ok=True)
            final_path = upload_dir / f"{hasher.hexdigest()}.pcap"
            tmp_path.replace(final_path)
            result = process_capture(final_path, config, clients)
        except (NotAPcap, TruncatedCapture) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        except tuple(_UNAVAILABLE) as exc:
            raise HTTPException(status_code=503,
                                detail=f"{_UNAVAILABLE[type(exc)]} unavailable: {exc}") from exc
        return {"session_id": result.session_id, "skipped": result.session_reused}

    @app.get("/sessions")
    def sessions():
        return {"sessions": corpus.list_sessions(config.store_root),
                "latest": corpus.latest_session(config.store_root)}

    @app.post("/sessions/{session_id}/query")
    def query(session_id: str, body: QueryBody):
        mode = "Hybrid" if body.mode.lower() == "hybrid" else "DenseOnly"
        try:
            record, bundle = query_session(session_id, body.question, config,
                                           clients=clients, mode=mode)
        except SessionNotFound as exc:
            raise HTTPException(status_code=404, detail=f"session not found: {exc}") from exc
        except EmptyIndex as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except tuple(_UNAVAILABLE) as exc:
            raise HTTPException(status_code=503,
                                detail=f"{_UNAVAILABLE[type(exc)]} unavailable: {exc}") from exc
        return {"answer": record.to_json_obj(), "bundle": bundle.to_json_obj()}

    @app.get("/sessions/{session_id}/report", response_class=PlainTextResponse)
    def report(session_id: str):
        try:
            return report_text(session_id, config)
        except (SessionNotFound, FileNotFoundError) as exc:
            raise HTTPException(status_code=404, detail=f"report not found: {exc}") from exc

    return app
