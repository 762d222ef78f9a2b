"""Related-symptom retrieval over the disease-symptom bipartite graph.

Symptom embeddings are refined with a curriculum max-margin objective on
two-hop (symptom, disease, symptom) forwards, then frozen into an exact
cosine index.  At query time each seed symptom spreads a budget of k slots
over its linked diseases proportionally to softmaxed normalized pointwise
mutual information, pulls the most similar symptoms out of each disease's
neighborhood, and merges per-seed candidates by their best similarity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import serialize
from .exceptions import (
    EmptyEvidenceError,
    NotFoundError,
    ShapeError,
    SkipPair,
    TrainingDivergedError,
    UndefinedInputError,
)
from .forward import _stack, batch_trees, forward_tree_batch, param_tensors
from .gcn import LayerWeights, ModelParams
from .graph import HeteroGraph, NodeKind, VisitRecord, disease, symptom
from .sampling import SDS, sample_tree
from .trainer import Adam

HARD_BAND = 10


class CooccurrenceStats:
    """Visit-level marginal and joint counts over symptoms and diseases."""

    def __init__(self, records: list[VisitRecord], n_symptoms: int, n_diseases: int):
        self.n_visits = len(records)
        self.n_symptoms = n_symptoms
        self.n_diseases = n_diseases
        sym_lists: list[list[int]] = [[] for _ in range(n_symptoms)]
        dis_lists: list[list[int]] = [[] for _ in range(n_diseases)]
        self.visit_symptoms: list[tuple[int, ...]] = []
        for vi, rec in enumerate(records):
            self.visit_symptoms.append(tuple(sorted(set(rec.symptoms))))
            for s in set(rec.symptoms):
                sym_lists[s].append(vi)
            for d in set(rec.diseases):
                dis_lists[d].append(vi)
        self.sym_visits = [np.array(v, dtype=np.int64) for v in sym_lists]
        self.dis_visits = [np.array(v, dtype=np.int64) for v in dis_lists]
        self._top_cache: dict[int, list[tuple[int, int]]] = {}

    @classmethod
    def from_graph(cls, g: HeteroGraph) -> "CooccurrenceStats":
        return cls(g.records, g.count(NodeKind.SYMPTOM), g.count(NodeKind.DISEASE))

    def _check_sym(self, s: int):
        if not 0 <= s < self.n_symptoms:
            raise NotFoundError(f"unknown symptom index {s}")

    def _check_dis(self, d: int):
        if not 0 <= d < self.n_diseases:
            raise NotFoundError(f"unknown disease index {d}")

    def symptom_count(self, s: int) -> int:
        self._check_sym(s)
        return len(self.sym_visits[s])

    def disease_count(self, d: int) -> int:
        self._check_dis(d)
        return len(self.dis_visits[d])

    def joint_sd(self, s: int, d: int) -> int:
        self._check_sym(s)
        self._check_dis(d)
        return _intersect_size(self.sym_visits[s], self.dis_visits[d])

    def cooccur(self, s: int, s2: int) -> int:
        """Number of visits containing both symptoms (diagonal = visit count)."""
        self._check_sym(s)
        self._check_sym(s2)
        return _intersect_size(self.sym_visits[s], self.sym_visits[s2])

    def cooccurring(self, s: int) -> list[tuple[int, int]]:
        """(other symptom, joint count), count descending then index ascending."""
        self._check_sym(s)
        cached = self._top_cache.get(s)
        if cached is not None:
            return cached
        counts: dict[int, int] = {}
        for vi in self.sym_visits[s]:
            for s2 in self.visit_symptoms[vi]:
                if s2 != s:
                    counts[s2] = counts.get(s2, 0) + 1
        out = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        self._top_cache[s] = out
        return out


def _intersect_size(a: np.ndarray, b: np.ndarray) -> int:
    if len(a) == 0 or len(b) == 0:
        return 0
    return int(len(np.intersect1d(a, b, assume_unique=True)))


def cooccur(stats: CooccurrenceStats, s: int, s2: int) -> int:
    return stats.cooccur(s, s2)


def npmi(stats: CooccurrenceStats, s: int, d: int) -> float:
    """Normalized pointwise mutual information in [-1, 1], natural log.

    Zero joint count maps to -1 by convention; a zero marginal is an error.
    """
    cs = stats.symptom_count(s)
    cd = stats.disease_count(d)
    if cs == 0 or cd == 0:
        raise UndefinedInputError(f"zero marginal count for s={s} or d={d}")
    joint = stats.joint_sd(s, d)
    return _npmi_from_counts(joint, cs, cd, stats.n_visits)


def npmi_symptoms(stats: CooccurrenceStats, s: int, s2: int) -> float:
    """Symptom-symptom analogue of :func:`npmi` (retrieval baseline)."""
    cs = stats.symptom_count(s)
    cs2 = stats.symptom_count(s2)
    if cs == 0 or cs2 == 0:
        raise UndefinedInputError(f"zero marginal count for s={s} or s'={s2}")
    return _npmi_from_counts(stats.cooccur(s, s2), cs, cs2, stats.n_visits)


def _npmi_from_counts(joint: int, ca: int, cb: int, n: int) -> float:
    if joint == 0:
        return -1.0
    if joint == n:
        # p(a,b) = 1 forces both marginals to 1: perfect association limit
        return 1.0
    p_ab = joint / n
    p_a = ca / n
    p_b = cb / n
    return math.log(p_ab / (p_a * p_b)) / (-math.log(p_ab))


def max_margin_loss(qs: np.ndarray, qs_pos: np.ndarray, qs_neg: np.ndarray, delta: float) -> float:
    """Hinge on final embeddings: max(0, s.neg - s.pos + delta)."""
    qs, qs_pos, qs_neg = (np.asarray(v, dtype=np.float64) for v in (qs, qs_pos, qs_neg))
    if not qs.shape == qs_pos.shape == qs_neg.shape or qs.ndim != 1:
        raise ShapeError("max_margin_loss expects three equal-dim vectors")
    return float(max(0.0, qs @ qs_neg - qs @ qs_pos + delta))


def best_positive(stats: CooccurrenceStats, s: int) -> tuple[int, int]:
    """Most co-occurring partner of ``s`` and its count; SkipPair if isolated."""
    top = stats.cooccurring(s)
    if not top:
        raise SkipPair(f"symptom {s} co-occurs with nothing")
    return top[0]


def curriculum_negatives(
    stats: CooccurrenceStats,
    s: int,
    epoch: int,
    total_epochs: int,
    n: int,
    seed: int,
) -> list[int]:
    """Sample ``n`` negatives for ``s``; the hard share ramps 0 -> 1 linearly.

    Eligible negatives co-occur with ``s`` strictly less than the positive
    does (zero co-occurrence included); the hard band is the top
    ``HARD_BAND`` eligible symptoms by co-occurrence.
    """
    _, pos_count = best_positive(stats, s)
    co = dict(stats.cooccurring(s))
    eligible = [
        s2
        for s2 in range(stats.n_symptoms)
        if s2 != s and co.get(s2, 0) < pos_count
    ]
    if not eligible:
        raise SkipPair(f"symptom {s} has no eligible negative")
    band = sorted(eligible, key=lambda s2: (-co.get(s2, 0), s2))[:HARD_BAND]
    share = min(1.0, epoch / max(1, total_epochs - 1)) if total_epochs > 1 else 1.0
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0x5E, s, epoch])
    out = []
    for _ in range(n):
        if rng.random() < share:
            out.append(band[int(rng.integers(len(band)))])
        else:
            out.append(eligible[int(rng.integers(len(eligible)))])
    return out


@dataclass
class RetrievalConfig:
    margin: float = 0.1
    epochs: int = 30
    negatives_per_pos: int = 5
    budget_k: int = 5
    lr: float = 0.005
    seed: int = 0

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be > 0")
        if self.budget_k < 1:
            raise ValueError("budget k must be >= 1")


@dataclass
class RetrievalIndex:
    """Frozen symptom embeddings plus the precomputed seed-disease weights."""

    embeddings: np.ndarray  # (|S|, dim)
    norms: np.ndarray
    npmi_sd: dict[tuple[int, int], float]
    graph_digest: str

    def __post_init__(self):
        if np.any(self.norms <= 0.0):
            raise ValueError("retrieval index rejects zero-norm embeddings")

    def similarity(self, a: int, b: int) -> float:
        return float(
            self.embeddings[a] @ self.embeddings[b] / (self.norms[a] * self.norms[b])
        )

    def to_bytes(self) -> bytes:
        pairs = sorted(self.npmi_sd)
        arrays = {
            "emb": self.embeddings,
            "norms": self.norms,
            "npmi_s": np.array([p[0] for p in pairs], dtype=np.int64),
            "npmi_d": np.array([p[1] for p in pairs], dtype=np.int64),
            "npmi_v": np.array([self.npmi_sd[p] for p in pairs], dtype=np.float64),
        }
        return serialize.pack("retrieval_index", {"graph_digest": self.graph_digest}, arrays)

    def save(self, path: str | Path, manifest: str | None = None):
        Path(path).write_bytes(self.to_bytes())
        if manifest is not None:
            Path(path).with_suffix(Path(path).suffix + ".manifest.txt").write_text(
                manifest, encoding="utf-8"
            )

    @staticmethod
    def load(path: str | Path) -> "RetrievalIndex":
        meta, arrays = serialize.read_container(path, "retrieval_index")
        table = {
            (int(s), int(d)): float(v)
            for s, d, v in zip(arrays["npmi_s"], arrays["npmi_d"], arrays["npmi_v"])
        }
        return RetrievalIndex(arrays["emb"], arrays["norms"], table, meta["graph_digest"])


def sds_params_from_pretrained(pretrained: ModelParams, seed: int) -> ModelParams:
    """Retrieval parameter set: pretrained embeddings, SDS stack warm-started
    from the trained DSD stack when depths agree."""
    emb = pretrained.embeddings
    params = ModelParams(
        embeddings=type(emb)(emb.diseases.copy(), emb.symptoms.copy())
    )
    if len(pretrained.dsd_weights) == SDS.depth:
        params.sds_weights = [
            LayerWeights(w.w1.copy(), w.w2.copy()) for w in pretrained.dsd_weights
        ]
    else:
        rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0x5D])
        bound = 1.0 / np.sqrt(params.dim)
        params.sds_weights = [
            LayerWeights(
                rng.uniform(-bound, bound, (params.dim, params.dim)),
                rng.uniform(-bound, bound, (params.dim, params.dim)),
            )
            for _ in range(SDS.depth)
        ]
    return params


def _forward_all_symptoms(params: ModelParams, g: HeteroGraph, seed: int) -> np.ndarray:
    from .forward import serving_path

    n = g.count(NodeKind.SYMPTOM)
    path = serving_path(SDS, g)
    pt = param_tensors(params)
    out = np.empty((n, params.dim))
    for start in range(0, n, 64):  # chunked: uncapped trees are wide
        trees = [
            sample_tree(g, symptom(s), path, seed)
            for s in range(start, min(start + 64, n))
        ]
        out[start : start + len(trees)] = forward_tree_batch(
            pt, _stack(pt, "sds", SDS.depth), batch_trees(trees)
        ).data
    return out


def train_retrieval(
    pretrained: ModelParams, g: HeteroGraph, cfg: RetrievalConfig
) -> RetrievalIndex:
    """Curriculum max-margin refinement, then freeze the cosine index."""
    stats = CooccurrenceStats.from_graph(g)
    params = sds_params_from_pretrained(pretrained, cfg.seed)
    n_sym = g.count(NodeKind.SYMPTOM)

    positives: dict[int, int] = {}
    for s in range(n_sym):
        try:
            positives[s] = best_positive(stats, s)[0]
        except SkipPair:
            continue

    opt = Adam(params, cfg.lr)
    for epoch in range(cfg.epochs):
        triples: list[tuple[int, int, int]] = []
        for s in sorted(positives):
            try:
                negs = curriculum_negatives(
                    stats, s, epoch, cfg.epochs, cfg.negatives_per_pos, cfg.seed
                )
            except SkipPair:
                continue
            triples.extend((s, positives[s], sn) for sn in negs)
        if not triples:
            break
        pt = param_tensors(params)
        step_seed = _mix_seed(cfg.seed, epoch)
        roots = sorted({x for tri in triples for x in tri})
        row = {s: i for i, s in enumerate(roots)}
        trees = [sample_tree(g, symptom(s), SDS, step_seed) for s in roots]
        q = forward_tree_batch(pt, _stack(pt, "sds", SDS.depth), batch_trees(trees))
        a_idx = np.array([row[t[0]] for t in triples], dtype=np.int64)
        p_idx = np.array([row[t[1]] for t in triples], dtype=np.int64)
        n_idx = np.array([row[t[2]] for t in triples], dtype=np.int64)
        qa, qp, qn = (ad.gather(q, i) for i in (a_idx, p_idx, n_idx))
        margin = (qa * qn).sum(axis=1) - (qa * qp).sum(axis=1) + cfg.margin
        loss = ad.relu(margin).sum()
        if not np.isfinite(loss.data):
            raise TrainingDivergedError(f"non-finite retrieval loss at epoch {epoch}")
        loss.backward()
        grads = {
            name: (pt[name].grad if pt[name].grad is not None else np.zeros_like(pt[name].data))
            for name in pt
        }
        opt.step(params, grads)

    final = _forward_all_symptoms(params, g, _mix_seed(cfg.seed, -1))
    norms = np.linalg.norm(final, axis=1)
    table: dict[tuple[int, int], float] = {}
    for s in range(n_sym):
        for d in g.neighbors(symptom(s), NodeKind.DISEASE):
            table[(s, int(d))] = npmi(stats, s, int(d))
    return RetrievalIndex(final, norms, table, g.id_map_digest())


def _mix_seed(seed: int, epoch: int) -> int:
    h = (seed & 0xFFFFFFFFFFFFFFFF) ^ 0x9E3779B97F4A7C15
    h = (h * 0x100000001B3 + (epoch & 0xFFFFFFFF)) & 0xFFFFFFFFFFFFFFFF
    return h >> 1


def allocate_budget(weights: list[float], k: int) -> list[int]:
    """Integer quotas: largest-remainder rounding of k * softmax(weights)."""
    if len(weights) == 0:
        raise ValueError("weights must be nonempty")
    if k < 1:
        raise ValueError("k must be >= 1")
    w = np.asarray(weights, dtype=np.float64)
    e = np.exp(w - w.max())
    p = e / e.sum()
    raw = k * p
    quotas = np.floor(raw).astype(np.int64)
    rest = k - int(quotas.sum())
    if rest > 0:
        remainders = raw - quotas
        order = np.lexsort((np.arange(len(w)), -remainders))
        for i in order[:rest]:
            quotas[i] += 1
    return [int(q) for q in quotas]


def retrieve(
    index: RetrievalIndex,
    g: HeteroGraph,
    stats: CooccurrenceStats,
    seeds,
    exclude,
    k: int,
) -> list[int]:
    """Top-k related symptoms for the seed set, never echoing seeds/excluded.

    Exclusions are applied before quota selection so a round's budget is
    never wasted on symptoms the caller already holds.
    """
    seeds = sorted(set(int(s) for s in seeds))
    if not seeds:
        raise EmptyEvidenceError("retrieve requires at least one seed symptom")
    banned = set(seeds) | set(int(s) for s in exclude)
    pool: dict[int, float] = {}
    for s0 in seeds:
        intermediates = [int(d) for d in g.neighbors(symptom(s0), NodeKind.DISEASE)]
        if not intermediates:
            continue
        weights = []
        for d in intermediates:
            cached = index.npmi_sd.get((s0, d))
            weights.append(cached if cached is not None else npmi(stats, s0, d))
        quotas = allocate_budget(weights, k)
        for d, quota in zip(intermediates, quotas):
            if quota == 0:
                continue
            cands = [
                int(s)
                for s in g.neighbors(disease(d), NodeKind.SYMPTOM)
                if int(s) not in banned
            ]
            if not cands:
                continue
            sims = np.array([index.similarity(c, s0) for c in cands])
            order = np.lexsort((np.array(cands), -sims))
            for i in order[:quota]:
                c = cands[int(i)]
                sim = float(sims[int(i)])
                if c not in pool or sim > pool[c]:
                    pool[c] = sim
    ranked = sorted(pool.items(), key=lambda kv: (-kv[1], kv[0]))
    return [c for c, _ in ranked[:k]]
