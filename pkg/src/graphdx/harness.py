"""Evaluation harness: splits, synthetic corpora, baselines, and reports.

Test and validation users are evaluated strictly cold-start: their records
never enter the serving graph, their evidence is filtered to the training
symptom vocabulary, and each query runs through the inductive ranking
path.  The synthetic generator plants per-disease signature symptom sets
under a Zipf disease prior so ranking quality is measurable against a known
ground truth.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .forward import rank_from_profiles
from .gcn import FULL, GcnVariant, ModelParams
from .graph import HeteroGraph, NodeKind, graph_from_records, parse_records, user
from .retrieval import CooccurrenceStats, RetrievalIndex, npmi_symptoms, retrieve
from .metrics import ndcg_at_k, precision_at_1, recall_at_k
from .session import SessionConfig, answer, open_session, suggest
from .trainer import GcnModel, MfModel, TrainConfig, train

RATIOS_7_1_2 = (0.7, 0.1, 0.2)


@dataclass
class Split:
    """User partition plus externally-keyed query material.

    Queries carry external string ids so they survive re-indexing when the
    serving graph is rebuilt from training records only.
    """

    train_ids: list[str]
    val_ids: list[str]
    test_ids: list[str]
    vocab: set[str]
    val_queries_ext: list[tuple[str, list[str], list[str]]]
    test_queries_ext: list[tuple[str, list[str], list[str]]]

    def resolve_train_users(self, g: HeteroGraph) -> list[int]:
        idx = g.index_of[NodeKind.USER]
        return sorted(idx[u] for u in self.train_ids if u in idx)

    def _resolve(self, g: HeteroGraph, queries):
        sym = g.index_of[NodeKind.SYMPTOM]
        dis = g.index_of[NodeKind.DISEASE]
        out = []
        for _, symptoms, diseases in queries:
            ev = sorted({sym[s] for s in symptoms if s in sym})
            truth = {dis[d] for d in diseases if d in dis}
            out.append((ev, truth))
        return out

    def resolve_val_queries(self, g: HeteroGraph):
        return self._resolve(g, self.val_queries_ext)

    def resolve_test_queries(self, g: HeteroGraph):
        return self._resolve(g, self.test_queries_ext)


def split_users(g: HeteroGraph, ratios=RATIOS_7_1_2, seed: int = 0) -> Split:
    """Seeded user shuffle partitioned by ``ratios``; vocabulary filtered."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    n = g.count(NodeKind.USER)
    n_train = int(math.floor(ratios[0] * n))
    n_val = int(math.floor(ratios[1] * n))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"{n} users cannot fill a {ratios} split")
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0x51])
    order = rng.permutation(n)
    parts = (
        sorted(int(i) for i in order[:n_train]),
        sorted(int(i) for i in order[n_train : n_train + n_val]),
        sorted(int(i) for i in order[n_train + n_val :]),
    )
    users_ext = g.ids[NodeKind.USER]
    sym_ext = g.ids[NodeKind.SYMPTOM]
    dis_ext = g.ids[NodeKind.DISEASE]

    by_user: dict[int, list] = {}
    for rec in g.records:
        by_user.setdefault(rec.user, []).append(rec)

    vocab = {
        sym_ext[s] for u in parts[0] for rec in by_user.get(u, []) for s in rec.symptoms
    }

    def queries(part):
        out = []
        for u in part:
            symptoms: list[str] = []
            diseases: list[str] = []
            for rec in by_user.get(u, []):
                symptoms.extend(sym_ext[s] for s in rec.symptoms)
                diseases.extend(dis_ext[d] for d in rec.diseases)
            symptoms = sorted({s for s in symptoms if s in vocab})
            diseases = sorted(set(diseases))
            out.append((users_ext[u], symptoms, diseases))
        return out

    return Split(
        [users_ext[u] for u in parts[0]],
        [users_ext[u] for u in parts[1]],
        [users_ext[u] for u in parts[2]],
        vocab,
        queries(parts[1]),
        queries(parts[2]),
    )


def training_graph(g: HeteroGraph, split: Split) -> HeteroGraph:
    """Serving/training graph rebuilt from the training users' records only."""
    train = set(split.train_ids)
    users_ext = g.ids[NodeKind.USER]
    lines = []
    sym_ext = g.ids[NodeKind.SYMPTOM]
    dis_ext = g.ids[NodeKind.DISEASE]
    for rec in g.records:
        if users_ext[rec.user] in train:
            lines.append(
                f"{users_ext[rec.user]}\t"
                + ",".join(dis_ext[d] for d in rec.diseases)
                + "\t"
                + ",".join(sym_ext[s] for s in rec.symptoms)
            )
    ids, records = parse_records(lines)
    return graph_from_records(ids, records)


# -- synthetic corpus ---------------------------------------------------------


@dataclass
class SyntheticSpec:
    """Parameters of the planted-signature corpus.

    Noise symptoms are drawn from a small pool of common nonspecific
    complaints (the first ``noise_pool_size`` symptom indices), mirroring
    how spurious EHR mentions concentrate on generic symptoms; signatures
    are drawn from the remaining vocabulary.
    """

    n_diseases: int = 30
    n_symptoms: int = 300
    n_users: int = 5000
    signature_size: int = 8
    zipf_exponent: float = 1.0
    signature_prob: float = 0.7
    noise_rate: float = 0.2
    noise_pool_size: int = 30
    cluster_size: int = 3
    shared_per_cluster: int = 3
    seed: int = 0
    signatures: list[list[int]] | None = None

    def __post_init__(self):
        if not 0.0 <= self.signature_prob <= 1.0:
            raise ValueError("signature_prob must be in [0, 1]")
        if self.noise_rate < 0:
            raise ValueError("noise_rate must be >= 0")
        if self.signatures is None and self.noise_pool_size + self.signature_size > self.n_symptoms:
            raise ValueError("vocabulary too small for the noise pool plus signatures")
        if self.signatures is not None and any(len(s) == 0 for s in self.signatures):
            raise ValueError("signature sets must be nonempty")


def zipf_probs(n: int, exponent: float) -> np.ndarray:
    w = 1.0 / np.power(np.arange(1, n + 1, dtype=np.float64), exponent)
    return w / w.sum()


def _clustered_signatures(spec: SyntheticSpec, pool: int, rng) -> list[list[int]]:
    """Signatures with within-cluster overlap: related diseases share a few
    symptoms (like comorbid conditions sharing complaints), the rest are
    disease-specific."""
    specific = np.arange(pool, spec.n_symptoms)
    shared_n = min(spec.shared_per_cluster, max(spec.signature_size - 1, 0))
    if spec.cluster_size <= 1:
        shared_n = 0
    signatures = []
    cluster_shared: dict[int, list[int]] = {}
    for d in range(spec.n_diseases):
        cluster = d // max(spec.cluster_size, 1)
        if shared_n and cluster not in cluster_shared:
            cluster_shared[cluster] = [
                int(s) for s in rng.choice(specific, size=shared_n, replace=False)
            ]
        shared = cluster_shared.get(cluster, []) if shared_n else []
        own_count = spec.signature_size - len(shared)
        own: list[int] = []
        while len(own) < own_count:
            cand = int(rng.choice(specific))
            if cand not in shared and cand not in own:
                own.append(cand)
        signatures.append(sorted(set(shared) | set(own)))
    return signatures


def gen_synthetic(spec: SyntheticSpec) -> tuple[list[str], dict]:
    """Record lines plus a ground-truth ledger of everything planted."""
    rng = np.random.default_rng([spec.seed & 0xFFFFFFFFFFFFFFFF, 0x6E])
    if spec.signatures is not None:
        signatures = [sorted(set(s)) for s in spec.signatures]
        pool = spec.noise_pool_size
    else:
        pool = min(spec.noise_pool_size, spec.n_symptoms - spec.signature_size)
        signatures = _clustered_signatures(spec, pool, rng)
    prior = zipf_probs(spec.n_diseases, spec.zipf_exponent)

    lines: list[str] = []
    user_disease: list[int] = []
    user_symptoms: list[list[int]] = []
    us_pairs = 0
    ds_pairs: set[tuple[int, int]] = set()
    for u in range(spec.n_users):
        d = int(rng.choice(spec.n_diseases, p=prior))
        sig = signatures[d]
        # fixed-fraction draw: each signature symptom is emitted with
        # marginal probability exactly signature_prob, but every visit is
        # guaranteed a proportionate share of its signature
        target = spec.signature_prob * len(sig)
        size = int(target) + (1 if rng.random() < target - int(target) else 0)
        size = max(1, min(len(sig), size))
        keep = sorted(int(s) for s in rng.choice(sig, size=size, replace=False))
        n_noise = int(rng.poisson(spec.noise_rate * len(sig)))
        noise_max = pool if pool > 0 else spec.n_symptoms
        noise = [int(s) for s in rng.choice(noise_max, size=n_noise)] if n_noise else []
        symptoms = sorted(set(keep) | set(noise))
        lines.append(
            f"u{u:05d}\td{d:03d}\t" + ",".join(f"s{s:04d}" for s in symptoms)
        )
        user_disease.append(d)
        user_symptoms.append(symptoms)
        us_pairs += len(symptoms)
        ds_pairs.update((d, s) for s in symptoms)

    spec_dict = asdict(spec)
    spec_dict.pop("signatures")
    ledger = {
        "spec": spec_dict,
        "signatures": signatures,
        "user_disease": user_disease,
        "user_symptoms": user_symptoms,
        "counts": {
            "user_symptom_pairs": us_pairs,
            "user_disease_pairs": spec.n_users,
            "disease_symptom_pairs": len(ds_pairs),
        },
    }
    return lines, ledger


# -- evaluation ---------------------------------------------------------------

METRIC_COLUMNS = (
    "precision_at_1",
    "recall_at_3",
    "ndcg_at_3",
    "recall_at_5",
    "ndcg_at_5",
    "recall_at_10",
    "ndcg_at_10",
)


def evaluate_ranking(model, params: ModelParams, g: HeteroGraph, queries, seed: int) -> dict:
    """Mean P@1 / Recall@k / nDCG@k over resolved queries."""
    usable = [(ev, truth) for ev, truth in queries if ev and truth]
    sums = {c: 0.0 for c in METRIC_COLUMNS}
    if not usable:
        return {**{c: 0.0 for c in METRIC_COLUMNS}, "n_queries": 0}
    profiles = model.profiles(params, g, seed)
    uvecs = model.user_vecs(params, g, [ev for ev, _ in usable], seed)
    for i, (_, truth) in enumerate(usable):
        ranked = [d for d, _ in rank_from_profiles(profiles, uvecs[i])]
        sums["precision_at_1"] += precision_at_1(ranked, truth)
        for k in (3, 5, 10):
            sums[f"recall_at_{k}"] += recall_at_k(ranked, truth, k)
            sums[f"ndcg_at_{k}"] += ndcg_at_k(ranked, truth, k)
    out = {c: sums[c] / len(usable) for c in METRIC_COLUMNS}
    out["n_queries"] = len(usable)
    return out


def simulate_user(truth_symptoms, suggestions) -> list[int]:
    """Deterministic answering policy: select exactly the true symptoms."""
    truth = set(int(s) for s in truth_symptoms)
    return [int(s) for s in suggestions if int(s) in truth]


def mf_baseline(
    g: HeteroGraph, split: Split, cfg: TrainConfig
) -> tuple[ModelParams, list[dict], dict]:
    """Matrix-factorization baseline through the same training loop."""
    model = MfModel()
    params = model.init(g, cfg)
    params, history = train(params, g, split, cfg, model=model)
    metrics = evaluate_ranking(
        model, params, g, split.resolve_test_queries(g), seed=cfg.seed
    )
    return params, history, metrics


def train_gcn(
    g: HeteroGraph, split: Split, cfg: TrainConfig, variant: GcnVariant = FULL
) -> tuple[ModelParams, list[dict], dict]:
    model = GcnModel(variant)
    params = model.init(g, cfg)
    params, history = train(params, g, split, cfg, model=model)
    metrics = evaluate_ranking(
        model, params, g, split.resolve_test_queries(g), seed=cfg.seed
    )
    return params, history, metrics


# -- retrieval protocols -------------------------------------------------------


def _half_split(evidence: list[int], seed: int, salt: int) -> tuple[list[int], list[int]]:
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0x4A, salt])
    perm = rng.permutation(len(evidence))
    half = len(evidence) // 2
    held = sorted(evidence[i] for i in perm[:half])
    seeds = sorted(evidence[i] for i in perm[half:])
    return seeds, held


def retrieval_recall(
    index: RetrievalIndex,
    g: HeteroGraph,
    stats: CooccurrenceStats,
    queries,
    seed: int,
    ks=(20, 50, 100),
    method: str = "assisted",
) -> dict:
    """Held-out-symptom recovery: seed with half a user's symptoms, count how
    many held-out symptoms the top-k retrieval recovers."""
    sums = {k: 0.0 for k in ks}
    n = 0
    for qi, (evidence, _) in enumerate(queries):
        if len(evidence) < 2:
            continue
        seeds, held = _half_split(sorted(evidence), seed, qi)
        if not held or not seeds:
            continue
        held_set = set(held)
        n += 1
        for k in ks:
            # budget allocation scales with k, so each cutoff is its own run
            if method == "assisted":
                got = retrieve(index, g, stats, seeds=seeds, exclude=seeds, k=k)
            elif method == "npmi":
                got = _npmi_ranking(stats, seeds, k)
            else:
                raise ValueError(f"unknown retrieval method {method!r}")
            sums[k] += len(held_set.intersection(got)) / len(held_set)
    return {f"recall_at_{k}": (sums[k] / n if n else 0.0) for k in ks} | {"n_queries": n}


def _npmi_ranking(stats: CooccurrenceStats, seeds: list[int], k: int) -> list[int]:
    """Raw symptom-symptom nPMI baseline: best seed association wins."""
    banned = set(seeds)
    scored = []
    for cand in range(stats.n_symptoms):
        if cand in banned or stats.symptom_count(cand) == 0:
            continue
        best = max(npmi_symptoms(stats, s0, cand) for s0 in seeds)
        scored.append((cand, best))
    scored.sort(key=lambda cs: (-cs[1], cs[0]))
    return [c for c, _ in scored[:k]]


def session_comparison(
    params: ModelParams,
    variant: GcnVariant,
    g: HeteroGraph,
    index: RetrievalIndex,
    stats: CooccurrenceStats,
    queries,
    scfg: SessionConfig,
    seed: int,
) -> dict:
    """Single-seed diagnosis with and without retrieval-guided rounds.

    Direct ranks from one seed symptom; the assisted arm runs a full
    session with the simulated user selecting its true symptoms.
    """
    model = GcnModel(variant)
    rows = {"direct": {c: 0.0 for c in METRIC_COLUMNS}, "assisted": {c: 0.0 for c in METRIC_COLUMNS}}
    n = 0
    profiles = model.profiles(params, g, seed)
    for qi, (evidence, truth) in enumerate(queries):
        if not evidence or not truth:
            continue
        rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0x5C, qi])
        s0 = int(sorted(evidence)[rng.integers(len(evidence))])
        n += 1

        direct_vec = model.user_vecs(params, g, [[s0]], seed)[0]
        _accumulate(rows["direct"], rank_from_profiles(profiles, direct_vec), truth)

        sess = open_session([s0], scfg, g)
        while sess.status == "collecting":
            sugg = suggest(
                sess, index, g, stats, params=params, variant=variant, profiles=profiles
            )
            if sess.status != "collecting":
                break
            sel = simulate_user(evidence, sugg)
            answer(sess, sel, params, g, variant, profiles=profiles)
        assisted_vec = model.user_vecs(params, g, [sess.symptoms], seed)[0]
        _accumulate(rows["assisted"], rank_from_profiles(profiles, assisted_vec), truth)

    for row in rows.values():
        for c in METRIC_COLUMNS:
            row[c] = row[c] / n if n else 0.0
        row["n_queries"] = n
    return rows


def _accumulate(sums: dict, ranked_pairs, truth):
    ranked = [d for d, _ in ranked_pairs]
    sums["precision_at_1"] += precision_at_1(ranked, truth)
    for k in (3, 5, 10):
        sums[f"recall_at_{k}"] += recall_at_k(ranked, truth, k)
        sums[f"ndcg_at_{k}"] += ndcg_at_k(ranked, truth, k)


# -- reports -------------------------------------------------------------------


def ablation_benchmark(g: HeteroGraph, split: Split, cfg: TrainConfig) -> dict:
    """Train every variant (local / dsd_only / usu_only / full) plus the MF
    baseline on one split and report the seven ranking columns per row."""
    from .gcn import VARIANTS

    rows = {}
    for name in ("local", "dsd_only", "usu_only", "full"):
        _, _, metrics = train_gcn(g, split, cfg, VARIANTS[name])
        rows[name] = metrics
    _, _, rows["mf"] = mf_baseline(g, split, cfg)
    return run_benchmark(rows)


def run_benchmark(named_results: dict[str, dict]) -> dict:
    """Normalize {row name: metric dict} into a report with fixed columns."""
    rows = {}
    for name, metrics in named_results.items():
        rows[name] = {c: metrics.get(c, 0.0) for c in METRIC_COLUMNS}
        rows[name]["n_queries"] = metrics.get("n_queries", 0)
    return {"columns": list(METRIC_COLUMNS), "rows": rows}


def format_table(report: dict) -> str:
    cols = report["columns"]
    header = ["model"] + [c.replace("_at_", "@").replace("precision", "P").replace("recall", "R").replace("ndcg", "nDCG") for c in cols]
    lines = ["\t".join(header)]
    for name, row in report["rows"].items():
        lines.append("\t".join([name] + [f"{row[c]:.4f}" for c in cols]))
    return "\n".join(lines) + "\n"


def metrics_jsonl(report: dict) -> str:
    out = []
    for name, row in report["rows"].items():
        rec = {"model": name} | {c: row[c] for c in report["columns"]}
        rec["n_queries"] = row.get("n_queries", 0)
        out.append(json.dumps(rec, sort_keys=True, separators=(",", ":")))
    return "\n".join(out) + "\n"


class AccessTracingGraph:
    """Delegating wrapper that records every neighbor query (leakage guard)."""

    def __init__(self, base: HeteroGraph):
        self._base = base
        self.queries: list[tuple[NodeKind, int, NodeKind]] = []

    def __getattr__(self, name):
        return getattr(self._base, name)

    def neighbors(self, v, kind):
        self.queries.append((v.kind, v.index, kind))
        return self._base.neighbors(v, kind)

    def user_free_view(self):
        from .graph import _UserFreeView

        return _UserFreeView(self)

    def user_queries(self):
        return [
            q for q in self.queries if q[0] == NodeKind.USER or q[2] == NodeKind.USER
        ]
