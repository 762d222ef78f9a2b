"""HTTP diagnosis service with restart-safe session persistence.

Sessions live in an embedded sqlite store keyed by session id with a TTL,
so an interrupted service resumes mid-conversation.  The model, graph,
retrieval index, and alias table are shared read-only; per-session
operations are serialized behind per-session locks.
"""

from __future__ import annotations

import json
import sqlite3
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .exceptions import (
    EmptyEvidenceError,
    GraphDxError,
    NotFoundError,
    SelectionError,
    SessionStateError,
)
from .gcn import FULL, GcnVariant, ModelParams, VARIANTS, variant_with_caps
from .graph import HeteroGraph, NodeKind
from .retrieval import CooccurrenceStats, RetrievalIndex
from .session import (
    AliasTable,
    DiagnosisSession,
    SessionConfig,
    answer,
    normalize,
    open_session,
    suggest,
)

DEFAULT_TTL_SECONDS = 24 * 3600


class SessionStore:
    """sqlite-backed session persistence with TTL expiry."""

    def __init__(self, path: str | Path, ttl_seconds: int = DEFAULT_TTL_SECONDS):
        self.path = str(path)
        self.ttl = ttl_seconds
        self._lock = threading.Lock()
        con = self._connect()
        with con:
            con.execute(
                "CREATE TABLE IF NOT EXISTS sessions ("
                "id TEXT PRIMARY KEY, body TEXT NOT NULL, expires REAL NOT NULL)"
            )
        con.close()

    def _connect(self) -> sqlite3.Connection:
        return sqlite3.connect(self.path, check_same_thread=False)

    def put(self, session: DiagnosisSession):
        body = json.dumps(session.to_dict(), sort_keys=True)
        with self._lock:
            con = self._connect()
            with con:
                con.execute(
                    "REPLACE INTO sessions (id, body, expires) VALUES (?, ?, ?)",
                    (session.session_id, body, time.time() + self.ttl),
                )
            con.close()

    def get(self, session_id: str) -> DiagnosisSession | None:
        with self._lock:
            con = self._connect()
            row = con.execute(
                "SELECT body, expires FROM sessions WHERE id = ?", (session_id,)
            ).fetchone()
            con.close()
        if row is None or row[1] < time.time():
            return None
        return DiagnosisSession.from_dict(json.loads(row[0]))

    def sweep(self):
        with self._lock:
            con = self._connect()
            with con:
                con.execute("DELETE FROM sessions WHERE expires < ?", (time.time(),))
            con.close()


@dataclass
class EngineArtifacts:
    params: ModelParams
    variant: GcnVariant
    graph: HeteroGraph
    index: RetrievalIndex
    stats: CooccurrenceStats
    aliases: AliasTable
    session_config: SessionConfig


class DiagnosisEngine:
    """Shared read-only artifacts plus per-session serialized operations."""

    def __init__(self, art: EngineArtifacts, store: SessionStore):
        self.art = art
        self.store = store
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        # profiles are a pure function of (params, graph); compute once
        from .forward import disease_profiles

        self._profiles = disease_profiles(art.params, art.graph, art.session_config.seed,
                                          art.variant)

    def _session_lock(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(session_id, threading.Lock())

    def open(self, phrases: list[str]) -> tuple[DiagnosisSession, list[int], list[str]]:
        self.store.sweep()
        mapped, unmapped = normalize(self.art.aliases, phrases)
        session = open_session(mapped, self.art.session_config, self.art.graph)
        self.store.put(session)
        return session, mapped, unmapped

    def suggestions(self, session_id: str) -> tuple[DiagnosisSession, list[int]]:
        with self._session_lock(session_id):
            session = self._load(session_id)
            out = suggest(
                session,
                self.art.index,
                self.art.graph,
                self.art.stats,
                params=self.art.params,
                variant=self.art.variant,
                profiles=self._profiles,
            )
            self.store.put(session)
            return session, out

    def answer(self, session_id: str, selected: list[int]) -> DiagnosisSession:
        with self._session_lock(session_id):
            session = self._load(session_id)
            answer(session, selected, self.art.params, self.art.graph, self.art.variant,
                   profiles=self._profiles)
            self.store.put(session)
            return session

    def transcript(self, session_id: str) -> DiagnosisSession:
        return self._load(session_id)

    def _load(self, session_id: str) -> DiagnosisSession:
        session = self.store.get(session_id)
        if session is None:
            raise NotFoundError(f"no session {session_id}")
        return session


class OpenRequest(BaseModel):
    phrases: list[str]


class AnswerRequest(BaseModel):
    selected: list[str]


def _symptom_name(g: HeteroGraph, idx: int) -> str:
    return g.ids[NodeKind.SYMPTOM][idx]

def _disease_name(g: HeteroGraph, idx: int) -> str:
    return g.ids[NodeKind.DISEASE][idx]


def _session_payload(engine: DiagnosisEngine, s: DiagnosisSession) -> dict:
    g = engine.art.graph
    return {
        "session_id": s.session_id,
        "status": s.status,
        "round": s.rounds_completed,
        "max_rounds": s.config.max_rounds,
        "symptoms": [
            {"id": _symptom_name(g, i), "index": i} for i in s.symptoms
        ],
        "shown": [
            [{"id": _symptom_name(g, i), "index": i} for i in lst] for lst in s.shown
        ],
        "selections": [
            [{"id": _symptom_name(g, i), "index": i} for i in lst]
            for lst in s.selections
        ],
        "confidence": s.confidence,
        "low_confidence": s.low_confidence,
        "top": [
            {"disease": _disease_name(g, d), "index": d, "probability": p}
            for d, p in s.top
        ],
    }


def create_app(engine: DiagnosisEngine, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="graphdx diagnosis service")
    g = engine.art.graph

    @app.exception_handler(GraphDxError)
    async def _domain_error(request, exc: GraphDxError):
        from fastapi.responses import JSONResponse

        code = 404 if isinstance(exc, NotFoundError) else 400
        if isinstance(exc, (SessionStateError, SelectionError, EmptyEvidenceError)):
            code = 409 if isinstance(exc, SessionStateError) else 422
        return JSONResponse(status_code=code, content={"detail": str(exc)})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/api/session")
    def open_new(req: OpenRequest):
        session, mapped, unmapped = engine.open(req.phrases)
        return {
            "session_id": session.session_id,
            "mapped": [
                {"id": _symptom_name(g, i), "index": i} for i in mapped
            ],
            "unmapped": unmapped,
        }

    @app.get("/api/session/{session_id}/suggestions")
    def suggestions(session_id: str):
        session, out = engine.suggestions(session_id)
        return {
            "round": session.rounds_completed,
            "status": session.status,
            "suggestions": [
                {"id": _symptom_name(g, i), "index": i, "name": _symptom_name(g, i)}
                for i in out
            ],
        }

    @app.post("/api/session/{session_id}/answer")
    def post_answer(session_id: str, req: AnswerRequest):
        sym_index = g.index_of[NodeKind.SYMPTOM]
        selected = []
        for ext in req.selected:
            if ext not in sym_index:
                raise HTTPException(status_code=422, detail=f"unknown symptom {ext!r}")
            selected.append(sym_index[ext])
        session = engine.answer(session_id, selected)
        return {
            "status": session.status,
            "round": session.rounds_completed,
            "confidence": session.confidence,
            "low_confidence": session.low_confidence,
            "top": [
                {"disease": _disease_name(g, d), "index": d, "probability": p}
                for d, p in session.top
            ],
        }

    @app.get("/api/session/{session_id}")
    def transcript(session_id: str):
        return _session_payload(engine, engine.transcript(session_id))

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app


def build_engine_from_config(config: dict, base_dir: str | Path = ".") -> DiagnosisEngine:
    """Assemble the engine from a service config mapping (see README)."""
    from .artifacts import load_checkpoint
    from .graph import load_records

    base = Path(base_dir)
    paths = config.get("paths", {})
    g = load_records(base / paths["records"])
    params, meta = load_checkpoint(base / paths["checkpoint"])
    index = RetrievalIndex.load(base / paths["index"])
    stats = CooccurrenceStats.from_graph(g)
    if paths.get("aliases"):
        aliases = AliasTable.load(base / paths["aliases"], g)
    else:
        aliases = AliasTable.identity(g)
    sess = config.get("session", {})
    scfg = SessionConfig(
        confidence_threshold=sess.get("confidence_threshold", 0.5),
        max_rounds=sess.get("max_rounds", 5),
        suggestions_per_round=sess.get("suggestions_per_round", 5),
        top_n=sess.get("top_n", 5),
        seed=sess.get("seed", 0),
    )
    variant = VARIANTS.get(meta.get("variant", "full"), FULL)
    variant = variant_with_caps(variant, config.get("caps", {}))
    store = SessionStore(
        config.get("store", {}).get("path", base / "sessions.sqlite"),
        config.get("store", {}).get("ttl_seconds", DEFAULT_TTL_SECONDS),
    )
    art = EngineArtifacts(params, variant, g, index, stats, aliases, scfg)
    return DiagnosisEngine(art, store)
