import numpy as np
import pytest
from fastapi.testclient import TestClient

from graphdx.gcn import FULL, init_params
from graphdx.graph import NodeKind, symptom
from graphdx.retrieval import CooccurrenceStats, RetrievalIndex, npmi
from graphdx.service import (
    DiagnosisEngine,
    EngineArtifacts,
    SessionStore,
    create_app,
)
from graphdx.session import AliasTable, SessionConfig

from conftest import graph_from_lines


@pytest.fixture
def engine(tmp_path):
    lines = [
        "u0\td0\ts0,s1",
        "u1\td0\ts0,s1,s2",
        "u2\td1\ts2,s3",
        "u3\td1\ts3,s4",
        "u4\td2\ts4,s5",
        "u5\td2\ts5,s0",
    ]
    g = graph_from_lines(lines)
    params = init_params(
        g.count(NodeKind.DISEASE), g.count(NodeKind.SYMPTOM), dim=4, seed=1
    )
    stats = CooccurrenceStats.from_graph(g)
    rng = np.random.default_rng(2)
    emb = rng.normal(size=(g.count(NodeKind.SYMPTOM), 4))
    table = {}
    for s in range(g.count(NodeKind.SYMPTOM)):
        for d in g.neighbors(symptom(s), NodeKind.DISEASE):
            table[(s, int(d))] = npmi(stats, s, int(d))
    index = RetrievalIndex(emb, np.linalg.norm(emb, axis=1), table, g.id_map_digest())
    aliases = AliasTable({"s0": 0, "s1": 1, "s2": 2, "s3": 3, "s4": 4, "s5": 5,
                          "have got a run": 2}, g.count(NodeKind.SYMPTOM))
    art = EngineArtifacts(
        params, FULL, g, index, stats, aliases,
        SessionConfig(confidence_threshold=0.5, max_rounds=3, seed=7),
    )
    store = SessionStore(tmp_path / "sessions.sqlite", ttl_seconds=60)
    return DiagnosisEngine(art, store)


@pytest.fixture
def client(engine):
    return TestClient(create_app(engine))


def test_healthz(client):
    r = client.get("/healthz")
    assert r.status_code == 200
    assert r.json() == {"status": "ok"}


def test_open_session_maps_and_reports_unmapped(client):
    r = client.post("/api/session", json={"phrases": ["s0", "have got a run", "gibberish"]})
    assert r.status_code == 200
    body = r.json()
    assert body["session_id"]
    assert [m["index"] for m in body["mapped"]] == [0, 2]
    assert body["unmapped"] == ["gibberish"]


def test_open_with_no_mapped_phrases_is_422(client):
    r = client.post("/api/session", json={"phrases": ["nope"]})
    assert r.status_code == 422


def test_suggestions_then_answer_flow(client):
    sid = client.post("/api/session", json={"phrases": ["s0"]}).json()["session_id"]
    r = client.get(f"/api/session/{sid}/suggestions")
    assert r.status_code == 200
    sugg = r.json()["suggestions"]
    assert 0 < len(sugg) <= 5
    ids = [s["id"] for s in sugg]
    r2 = client.post(f"/api/session/{sid}/answer", json={"selected": ids[:1]})
    assert r2.status_code == 200
    body = r2.json()
    assert body["status"] in ("collecting", "diagnosed")
    assert 0.0 < body["confidence"] <= 1.0
    probs = [t["probability"] for t in body["top"]]
    assert abs(sum(probs) - 1.0) < 1e-9  # top_n covers all 3 diseases here


def test_selection_outside_suggestions_rejected(client):
    sid = client.post("/api/session", json={"phrases": ["s0"]}).json()["session_id"]
    sugg = client.get(f"/api/session/{sid}/suggestions").json()["suggestions"]
    names = {s["id"] for s in sugg}
    outside = next(f"s{i}" for i in range(6) if f"s{i}" not in names and f"s{i}" != "s0")
    r = client.post(f"/api/session/{sid}/answer", json={"selected": [outside]})
    assert r.status_code == 422


def test_unknown_session_404(client):
    assert client.get("/api/session/nope").status_code == 404
    assert client.get("/api/session/nope/suggestions").status_code == 404


def test_transcript_mirrors_state(client):
    sid = client.post("/api/session", json={"phrases": ["s0", "s2"]}).json()["session_id"]
    client.get(f"/api/session/{sid}/suggestions")
    client.post(f"/api/session/{sid}/answer", json={"selected": []})
    t = client.get(f"/api/session/{sid}").json()
    assert t["session_id"] == sid
    assert [s["index"] for s in t["symptoms"]] == [0, 2]
    assert t["round"] == 1
    assert len(t["shown"]) == 1
    assert t["selections"] == [[]]


def test_sessions_survive_engine_restart(engine, tmp_path):
    client = TestClient(create_app(engine))
    sid = client.post("/api/session", json={"phrases": ["s0"]}).json()["session_id"]
    client.get(f"/api/session/{sid}/suggestions")
    # a new engine over the same store sees the session
    engine2 = DiagnosisEngine(engine.art, SessionStore(engine.store.path))
    client2 = TestClient(create_app(engine2))
    t = client2.get(f"/api/session/{sid}")
    assert t.status_code == 200
    assert t.json()["session_id"] == sid


def test_max_rounds_forces_diagnosis(client):
    sid = client.post("/api/session", json={"phrases": ["s0"]}).json()["session_id"]
    status = "collecting"
    rounds = 0
    while status == "collecting" and rounds < 5:
        s = client.get(f"/api/session/{sid}/suggestions").json()
        if s["status"] != "collecting":
            status = s["status"]
            break
        body = client.post(f"/api/session/{sid}/answer", json={"selected": []}).json()
        status = body["status"]
        rounds = body["round"]
    assert status in ("diagnosed", "exhausted")
    assert rounds <= 3
