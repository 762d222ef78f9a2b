"""Interactive diagnosis sessions: alias mapping, suggestion rounds, and
confidence-gated ranking.

A session accumulates evidence monotonically: each round the retrieval
index proposes up to k unseen symptoms, the caller reports which apply
(possibly none), and the ranker scores every disease from the combined
evidence.  The session closes once the max softmax probability clears the
confidence threshold or the round budget is spent; a forced close below
threshold is flagged low-confidence.
"""

from __future__ import annotations

import json
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    EmptyEvidenceError,
    NotFoundError,
    SelectionError,
    SessionStateError,
)
from .forward import rank_diseases
from .gcn import FULL, GcnVariant, ModelParams
from .graph import HeteroGraph, NodeKind
from .retrieval import CooccurrenceStats, RetrievalIndex, retrieve

COLLECTING = "collecting"
DIAGNOSED = "diagnosed"
EXHAUSTED = "exhausted"


def normalize_phrase(phrase: str) -> str:
    return " ".join(phrase.casefold().split())


class AliasTable:
    """Normalized surface phrase -> canonical symptom index."""

    def __init__(self, phrase_to_symptom: dict[str, int], n_symptoms: int):
        self.mapping: dict[str, int] = {}
        for phrase, idx in phrase_to_symptom.items():
            if not 0 <= idx < n_symptoms:
                raise NotFoundError(f"alias target {idx} is not a known symptom")
            self.mapping[normalize_phrase(phrase)] = int(idx)

    @classmethod
    def load(cls, path: str | Path, g: HeteroGraph) -> "AliasTable":
        """JSON file mapping phrases to symptom external-id strings."""
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        resolved = {}
        sym_index = g.index_of[NodeKind.SYMPTOM]
        for phrase, ext in raw.items():
            if ext not in sym_index:
                raise NotFoundError(f"alias target {ext!r} is not in the graph")
            resolved[phrase] = sym_index[ext]
        return cls(resolved, g.count(NodeKind.SYMPTOM))

    @classmethod
    def identity(cls, g: HeteroGraph) -> "AliasTable":
        """Every canonical symptom id maps to itself."""
        sym_index = g.index_of[NodeKind.SYMPTOM]
        return cls(dict(sym_index), g.count(NodeKind.SYMPTOM))


def normalize(aliases: AliasTable, phrases: list[str]) -> tuple[list[int], list[str]]:
    """Map phrases to symptom indices; unknown phrases are data, not errors."""
    mapped: list[int] = []
    unmapped: list[str] = []
    seen = set()
    for phrase in phrases:
        idx = aliases.mapping.get(normalize_phrase(phrase))
        if idx is None:
            unmapped.append(phrase)
        elif idx not in seen:
            seen.add(idx)
            mapped.append(idx)
    return mapped, unmapped


@dataclass
class SessionConfig:
    confidence_threshold: float = 0.5
    max_rounds: int = 5
    suggestions_per_round: int = 5
    top_n: int = 5
    seed: int = 0

    def __post_init__(self):
        # 0 disables the gate (every answer is confident enough to close)
        if not 0.0 <= self.confidence_threshold < 1.0:
            raise ValueError("confidence threshold must lie in [0, 1)")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")


@dataclass
class RoundOutcome:
    round: int
    status: str
    confidence: float
    top: list[tuple[int, float]]
    low_confidence: bool


@dataclass
class DiagnosisSession:
    session_id: str
    config: SessionConfig
    symptoms: list[int]
    rounds_completed: int = 0
    shown: list[list[int]] = field(default_factory=list)
    selections: list[list[int]] = field(default_factory=list)
    status: str = COLLECTING
    confidence: float | None = None
    top: list[tuple[int, float]] = field(default_factory=list)
    low_confidence: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["config"] = asdict(self.config)
        return d

    @staticmethod
    def from_dict(d: dict) -> "DiagnosisSession":
        cfg = SessionConfig(**d["config"])
        s = DiagnosisSession(d["session_id"], cfg, list(d["symptoms"]))
        s.rounds_completed = d["rounds_completed"]
        s.shown = [list(x) for x in d["shown"]]
        s.selections = [list(x) for x in d["selections"]]
        s.status = d["status"]
        s.confidence = d["confidence"]
        s.top = [(int(a), float(b)) for a, b in d["top"]]
        s.low_confidence = d["low_confidence"]
        return s


def open_session(
    seeds, cfg: SessionConfig, g: HeteroGraph, session_id: str | None = None
) -> DiagnosisSession:
    """Start a session from deduplicated, validated seed symptoms."""
    ordered: list[int] = []
    seen = set()
    for s in seeds:
        s = int(s)
        if not 0 <= s < g.count(NodeKind.SYMPTOM):
            raise NotFoundError(f"unknown symptom index {s}")
        if s not in seen:
            seen.add(s)
            ordered.append(s)
    if not ordered:
        raise EmptyEvidenceError("a session needs at least one seed symptom")
    return DiagnosisSession(session_id or uuid.uuid4().hex, cfg, ordered)


def _softmax(scores: np.ndarray) -> np.ndarray:
    e = np.exp(scores - scores.max())
    return e / e.sum()


def _score_session(
    session: DiagnosisSession,
    params: ModelParams,
    g: HeteroGraph,
    variant: GcnVariant,
    profiles: np.ndarray | None = None,
) -> tuple[float, list[tuple[int, float]]]:
    seed = _round_seed(session.config.seed, session.rounds_completed)
    if profiles is None:
        ranked = rank_diseases(params, g, session.symptoms, seed, variant)
    else:
        # precomputed disease profiles: identical ranking, reused math
        from .forward import rank_from_profiles, user_profile

        qu = user_profile(params, g, sorted(set(session.symptoms)), seed, variant)
        ranked = rank_from_profiles(profiles, qu)
    scores = np.empty(len(ranked))
    for d, sc in ranked:
        scores[d] = sc
    probs = _softmax(scores)
    top = [(d, float(probs[d])) for d, _ in ranked[: session.config.top_n]]
    return float(probs.max()), top


def _round_seed(seed: int, round_no: int) -> int:
    return ((seed & 0xFFFFFFFFFFFFFFFF) * 0x100000001B3 + round_no + 1) & 0x7FFFFFFFFFFFFFFF


def suggest(
    session: DiagnosisSession,
    index: RetrievalIndex,
    g: HeteroGraph,
    stats: CooccurrenceStats,
    params: ModelParams | None = None,
    variant: GcnVariant = FULL,
    profiles=None,
) -> list[int]:
    """Propose up to k fresh symptoms; an empty proposal exhausts the session.

    Passing ``params`` lets an exhausted session close with a final ranking.
    """
    if session.status != COLLECTING:
        raise SessionStateError(f"cannot suggest in status {session.status}")
    if len(session.shown) > session.rounds_completed:
        return session.shown[-1]  # round already has its suggestions
    exclude = set(session.symptoms)
    for lst in session.shown:
        exclude.update(lst)
    found = retrieve(
        index,
        g,
        stats,
        seeds=session.symptoms,
        exclude=exclude,
        k=session.config.suggestions_per_round,
    )
    if not found:
        session.status = EXHAUSTED
        if params is not None:
            conf, top = _score_session(session, params, g, variant, profiles)
            session.confidence = conf
            session.top = top
            session.low_confidence = conf < session.config.confidence_threshold
        return []
    session.shown.append(found)
    return found


def answer(
    session: DiagnosisSession,
    selected,
    params: ModelParams,
    g: HeteroGraph,
    variant: GcnVariant = FULL,
    profiles=None,
) -> RoundOutcome:
    """Fold a selection into the evidence, advance the round, score, and
    close the session when confident or out of rounds."""
    if session.status != COLLECTING:
        raise SessionStateError(f"cannot answer in status {session.status}")
    last = (
        session.shown[-1]
        if len(session.shown) == session.rounds_completed + 1
        else []
    )
    chosen: list[int] = []
    seen = set()
    for s in selected:
        s = int(s)
        if s not in last:
            raise SelectionError(f"symptom {s} was not in the last suggestions")
        if s not in seen:
            seen.add(s)
            chosen.append(s)
    if len(session.shown) == session.rounds_completed:
        session.shown.append([])  # answered without a suggestion round
    session.selections.append(chosen)
    for s in chosen:
        if s not in session.symptoms:
            session.symptoms.append(s)
    session.rounds_completed += 1

    conf, top = _score_session(session, params, g, variant, profiles)
    session.confidence = conf
    session.top = top
    cfg = session.config
    if conf >= cfg.confidence_threshold or session.rounds_completed >= cfg.max_rounds:
        session.status = DIAGNOSED
        session.low_confidence = conf < cfg.confidence_threshold
    return RoundOutcome(
        session.rounds_completed, session.status, conf, top, session.low_confidence
    )
