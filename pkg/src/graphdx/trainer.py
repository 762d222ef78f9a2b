"""Pairwise ranking optimization of the convolutional ranker.

The objective is the summed pairwise softplus loss
``sum -log sigmoid(y_pos - y_neg) + lam * ||params||^2`` over sampled
(user, observed disease, unobserved disease) triplets, with message
dropout at train time and a hard-negative mining schedule that ramps the
hard share linearly from 0 to its peak over the first half of training.
Gradients come from the reverse-mode tape in :mod:`graphdx.autodiff` and
are cross-checked against central finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .exceptions import (
    EmptyEvidenceError,
    NoNegativeError,
    TrainingDivergedError,
)
from .forward import (
    DropoutSampler,
    batch_trees,
    disease_profiles,
    forward_tree_batch,
    param_tensors,
    rank_from_profiles,
    user_evidence_tree,
    user_profiles_batch,
    _stack,
)
from .gcn import FULL, GcnVariant, ModelParams, init_params
from .graph import HeteroGraph, NodeKind, disease, user
from .metrics import ndcg_at_k
from .sampling import sample_tree


@dataclass(frozen=True)
class Triplet:
    """One BPR comparison: user prefers ``pos`` over ``neg``."""

    user: int
    pos: int
    neg: int

    def __post_init__(self):
        if self.pos == self.neg:
            raise ValueError("positive and negative disease must differ")


@dataclass
class TrainConfig:
    lr: float = 0.005
    batch_size: int = 512
    weight_decay: float = 1e-4
    dropout: float = 0.1
    hard_fraction_peak: float = 0.5
    max_epochs: int = 50
    patience: int = 8
    seed: int = 0
    dim: int = 64

    def __post_init__(self):
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def hard_fraction(epoch: int, cfg: TrainConfig) -> float:
    """Share of hard negatives in an epoch's batches."""
    half = max(1.0, cfg.max_epochs / 2.0)
    return cfg.hard_fraction_peak * min(1.0, epoch / half)


# -- models -------------------------------------------------------------------


class GcnModel:
    """Meta-path convolution ranker (full model or an ablation variant).

    Training forwards run the same inductive path as serving: each user is
    presented as a cold-start query (their full symptom evidence at hop 1,
    graph context through the user-free view), so the optimized regime is
    exactly the one rankings are produced in.
    """

    def __init__(self, variant: GcnVariant = FULL):
        self.variant = variant

    @property
    def name(self) -> str:
        return f"gcn_{self.variant.name}" if self.variant.name != "full" else "gcn"

    def init(self, g: HeteroGraph, cfg: TrainConfig) -> ModelParams:
        return init_params(
            g.count(NodeKind.DISEASE),
            g.count(NodeKind.SYMPTOM),
            dim=cfg.dim,
            seed=cfg.seed,
            usu_depth=self.variant.usu_depth,
            dsd_depth=self.variant.dsd_depth,
        )

    def triplet_scores(self, pt, params, g, users, pos, neg, seed, drop):
        usu_trees = [
            user_evidence_tree(
                g,
                [int(s) for s in g.neighbors(user(int(u)), NodeKind.SYMPTOM)],
                self.variant.usu_path,
                seed,
            )
            for u in users
        ]
        qu = forward_tree_batch(
            pt, _stack(pt, "usu", self.variant.usu_depth), batch_trees(usu_trees), drop
        )
        uniq = sorted(set(int(d) for d in pos) | set(int(d) for d in neg))
        row = {d: i for i, d in enumerate(uniq)}
        if self.variant.dsd_path is None:
            qd = ad.gather(pt["dis"], np.array(uniq, dtype=np.int64))
        else:
            view = g.user_free_view()
            dsd_trees = [
                sample_tree(view, disease(d), self.variant.dsd_path, seed) for d in uniq
            ]
            qd = forward_tree_batch(
                pt, _stack(pt, "dsd", self.variant.dsd_depth), batch_trees(dsd_trees), drop
            )
        qd_pos = ad.gather(qd, np.array([row[int(d)] for d in pos], dtype=np.int64))
        qd_neg = ad.gather(qd, np.array([row[int(d)] for d in neg], dtype=np.int64))
        y_pos = (qu * qd_pos).sum(axis=1)
        y_neg = (qu * qd_neg).sum(axis=1)
        return y_pos, y_neg

    def profiles(self, params, g, seed):
        return disease_profiles(params, g, seed, self.variant)

    def user_vecs(self, params, g, evidence_lists, seed):
        return user_profiles_batch(params, g, evidence_lists, seed, self.variant)


class MfModel:
    """Matrix-factorization baseline: mean symptom embedding vs. disease row."""

    name = "mf"

    def init(self, g: HeteroGraph, cfg: TrainConfig) -> ModelParams:
        return init_params(
            g.count(NodeKind.DISEASE),
            g.count(NodeKind.SYMPTOM),
            dim=cfg.dim,
            seed=cfg.seed,
            usu_depth=0,
            dsd_depth=0,
        )

    def triplet_scores(self, pt, params, g, users, pos, neg, seed, drop):
        ev_lists = [
            [int(s) for s in g.neighbors(user(int(u)), NodeKind.SYMPTOM)] for u in users
        ]
        width = max(len(ev) for ev in ev_lists)
        idx = np.zeros((len(ev_lists), width), dtype=np.int64)
        mask = np.zeros((len(ev_lists), width), dtype=np.float64)
        for i, ev in enumerate(ev_lists):
            if not ev:
                raise EmptyEvidenceError(f"user {users[i]} has no symptoms")
            idx[i, : len(ev)] = ev
            mask[i, : len(ev)] = 1.0
        em = ad.gather(pt["sym"], idx) * mask[..., None]
        inv = 1.0 / np.maximum(mask.sum(axis=1), 1.0)
        qu = em.sum(axis=1) * inv[:, None]
        qd_pos = ad.gather(pt["dis"], np.asarray(pos, dtype=np.int64))
        qd_neg = ad.gather(pt["dis"], np.asarray(neg, dtype=np.int64))
        return (qu * qd_pos).sum(axis=1), (qu * qd_neg).sum(axis=1)

    def profiles(self, params, g, seed):
        return params.embeddings.diseases.copy()

    def user_vecs(self, params, g, evidence_lists, seed):
        out = np.zeros((len(evidence_lists), params.dim))
        for i, ev in enumerate(evidence_lists):
            ev = sorted(set(ev))
            if not ev:
                raise EmptyEvidenceError("empty evidence")
            rows = params.embeddings.symptoms[np.array(ev, dtype=np.int64)]
            out[i] = rows.sum(axis=0) * (1.0 / len(ev))
        return out


# -- loss and gradients -------------------------------------------------------


def bpr_loss(
    params: ModelParams,
    triplets: list[Triplet],
    g: HeteroGraph,
    seed: int,
    *,
    model=None,
    lam: float = 0.0,
    dropout_p: float = 0.0,
) -> tuple[float, dict[str, np.ndarray]]:
    """Summed pairwise loss plus l2 penalty, with gradients for every parameter."""
    if not triplets:
        raise ValueError("triplets must be nonempty")
    model = model if model is not None else GcnModel(FULL)
    pt = param_tensors(params)
    users = np.array([t.user for t in triplets], dtype=np.int64)
    pos = np.array([t.pos for t in triplets], dtype=np.int64)
    neg = np.array([t.neg for t in triplets], dtype=np.int64)
    drop = None
    if dropout_p > 0.0:
        drop = DropoutSampler(
            dropout_p, np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0xD0])
        )
    y_pos, y_neg = model.triplet_scores(pt, params, g, users, pos, neg, seed, drop)
    loss = -(ad.logsigmoid(y_pos - y_neg)).sum()
    if lam > 0.0:
        for name in pt:
            loss = loss + ad.sum_squares(pt[name]) * lam
    loss.backward()
    grads = {
        name: (pt[name].grad if pt[name].grad is not None else np.zeros_like(pt[name].data))
        for name in pt
    }
    return float(loss.data), grads


def message_dropout(msg: np.ndarray, p: float, mode: str = "train", seed: int = 0) -> np.ndarray:
    """Zero each element with probability p; survivors scale by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError("p must be in [0, 1)")
    if mode not in ("train", "infer"):
        raise ValueError("mode must be train or infer")
    msg = np.asarray(msg, dtype=np.float64)
    if mode == "infer" or p == 0.0:
        return msg.copy()
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0xDD])
    keep = rng.random(msg.shape) >= p
    return msg * keep / (1.0 - p)


def cosine_matrix(embs: np.ndarray) -> np.ndarray:
    norms = np.maximum(np.linalg.norm(embs, axis=1), 1e-12)
    unit = embs / norms[:, None]
    return unit @ unit.T


def mine_hard_negative(params: ModelParams, user_idx: int, pos_idx: int, g: HeteroGraph) -> int:
    """Most cosine-similar unobserved disease to the positive; ties take the
    smallest index."""
    n = g.count(NodeKind.DISEASE)
    if n < 2:
        raise NoNegativeError("need at least two diseases")
    observed = set(int(d) for d in g.neighbors(user(user_idx), NodeKind.DISEASE))
    observed.add(pos_idx)
    eligible = np.array([d for d in range(n) if d not in observed], dtype=np.int64)
    if len(eligible) == 0:
        raise NoNegativeError(f"user {user_idx} has observed every disease")
    q = params.embeddings.diseases
    qp = q[pos_idx]
    sims = (q[eligible] @ qp) / (
        np.maximum(np.linalg.norm(q[eligible], axis=1), 1e-12)
        * max(np.linalg.norm(qp), 1e-12)
    )
    best = eligible[np.lexsort((eligible, -sims))[0]]
    return int(best)


HARD_NEGATIVE_BAND = 3


def _draw_negatives(
    rng: np.random.Generator,
    pairs: list[tuple[int, int]],
    observed: dict[int, set[int]],
    n_diseases: int,
    frac_hard: float,
    sim: np.ndarray,
) -> list[Triplet]:
    """Hard draws come from the top cosine band so every persistently
    confusable pair keeps receiving gradient, not just the single argmax."""
    triplets = []
    for u, d_pos in pairs:
        obs = observed[u]
        eligible = [d for d in range(n_diseases) if d not in obs]
        if not eligible:
            raise NoNegativeError(f"user {u} has observed every disease")
        if rng.random() < frac_hard:
            el = np.array(eligible, dtype=np.int64)
            sims = sim[d_pos, el]
            band = el[np.lexsort((el, -sims))[: min(HARD_NEGATIVE_BAND, len(el))]]
            d_neg = int(band[rng.integers(len(band))])
        else:
            d_neg = int(eligible[rng.integers(len(eligible))])
        triplets.append(Triplet(u, d_pos, d_neg))
    return triplets


class Adam:
    """Per-parameter moment estimates with bias correction."""

    def __init__(self, params: ModelParams, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(arr) for name, arr in params.items()}
        self.v = {name: np.zeros_like(arr) for name, arr in params.items()}

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, arr in params.items():
            gr = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * gr
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * gr * gr
            mh = self.m[name] / b1c
            vh = self.v[name] / b2c
            arr -= self.lr * mh / (np.sqrt(vh) + self.eps)


def validation_ndcg5(model, params, g, val_queries, seed: int) -> float:
    """Mean nDCG@5 over resolved validation queries [(evidence, truth set)]."""
    usable = [(ev, truth) for ev, truth in val_queries if ev and truth]
    if not usable:
        return 0.0
    profiles = model.profiles(params, g, seed)
    uvecs = model.user_vecs(params, g, [ev for ev, _ in usable], seed)
    total = 0.0
    for i, (_, truth) in enumerate(usable):
        ranked = [d for d, _ in rank_from_profiles(profiles, uvecs[i])]
        total += ndcg_at_k(ranked, truth, 5)
    return total / len(usable)


def train(
    params: ModelParams,
    g: HeteroGraph,
    split,
    cfg: TrainConfig,
    model=None,
) -> tuple[ModelParams, list[dict]]:
    """Mini-batch BPR training with early stopping on validation nDCG@5.

    ``split`` must expose ``resolve_train_users(g)`` and
    ``resolve_val_queries(g)``.  Returns the best-validation parameters and
    a per-epoch history of (epoch, loss, val nDCG@5) records.
    """
    model = model if model is not None else GcnModel(FULL)
    train_users = split.resolve_train_users(g)
    val_queries = split.resolve_val_queries(g)
    n_diseases = g.count(NodeKind.DISEASE)

    pairs_all: list[tuple[int, int]] = []
    observed: dict[int, set[int]] = {}
    for u in train_users:
        ds = [int(d) for d in g.neighbors(user(u), NodeKind.DISEASE)]
        observed[u] = set(ds)
        pairs_all.extend((u, d) for d in ds)
    pairs_all.sort()

    opt = Adam(params, cfg.lr)
    eval_seed = _mix(cfg.seed, 0xEF)
    history: list[dict] = []
    best_val = -np.inf
    best_params = params.copy()
    stale = 0

    for epoch in range(cfg.max_epochs):
        rng = np.random.default_rng([cfg.seed & 0xFFFFFFFFFFFFFFFF, 0xE0, epoch])
        order = rng.permutation(len(pairs_all))
        frac = hard_fraction(epoch, cfg)
        sim = cosine_matrix(params.embeddings.diseases)
        epoch_loss = 0.0
        for step_i, start in enumerate(range(0, len(pairs_all), cfg.batch_size)):
            batch_pairs = [pairs_all[i] for i in order[start : start + cfg.batch_size]]
            neg_rng = np.random.default_rng(
                [cfg.seed & 0xFFFFFFFFFFFFFFFF, 0xE1, epoch, step_i]
            )
            triplets = _draw_negatives(
                neg_rng, batch_pairs, observed, n_diseases, frac, sim
            )
            step_seed = _mix(cfg.seed, 0xE2, epoch, step_i)
            loss, grads = bpr_loss(
                params,
                triplets,
                g,
                step_seed,
                model=model,
                lam=cfg.weight_decay,
                dropout_p=cfg.dropout,
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss {loss} at epoch {epoch} step {step_i}"
                )
            epoch_loss += loss
            if cfg.lr > 0:
                opt.step(params, grads)
        val = validation_ndcg5(model, params, g, val_queries, eval_seed)
        history.append({"epoch": epoch, "loss": epoch_loss, "val_ndcg5": val})
        if val >= best_val:
            # ties at the running best keep the most recent (most polished)
            # parameters; patience still runs down without strict improvement
            stale = 0 if val > best_val else stale + 1
            best_val = val
            best_params = params.copy()
        else:
            stale += 1
        if stale >= cfg.patience:
            break
    return best_params, history


def _mix(*parts: int) -> int:
    """Stable 63-bit seed from integer parts."""
    h = 0xCBF29CE484222325
    for p in parts:
        h ^= (p & 0xFFFFFFFFFFFFFFFF) + 0x9E3779B97F4A7C15
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h >> 1


def gradient_check(
    params: ModelParams,
    triplets: list[Triplet],
    g: HeteroGraph,
    epsilon: float = 1e-5,
    *,
    model=None,
    lam: float = 0.0,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients."""
    model = model if model is not None else GcnModel(FULL)
    _, grads = bpr_loss(params, triplets, g, seed, model=model, lam=lam, dropout_p=0.0)

    def eval_loss():
        loss, _ = bpr_loss(params, triplets, g, seed, model=model, lam=lam, dropout_p=0.0)
        return loss

    worst = 0.0
    for name, arr in params.items():
        flat = arr.reshape(-1)
        gflat = grads[name].reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + epsilon
            up = eval_loss()
            flat[i] = keep - epsilon
            down = eval_loss()
            flat[i] = keep
            numeric = (up - down) / (2.0 * epsilon)
            err = abs(gflat[i] - numeric) / max(abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


def history_to_jsonl(history: list[dict]) -> str:
    return "".join(
        json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n" for rec in history
    )
