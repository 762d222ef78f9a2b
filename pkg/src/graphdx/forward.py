"""Vectorized forward passes over batches of sampled trees, plus ranking.

Trees are padded into dense index/mask arrays so one forward is a handful
of matrix products regardless of batch size.  The evaluation order matches
the per-tree reference in :mod:`graphdx.gcn`: children ascending, means as
sum times reciprocal count, empty hops falling back to the self message.

Ranking is strictly inductive: the query user is a virtual node whose
hop-1 edges are the supplied evidence symptoms, and the graph is consulted
through its user-free view, so stored users can never influence a ranking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import EmptyEvidenceError, NotFoundError
from .gcn import FULL, GcnVariant, ModelParams
from .graph import HeteroGraph, NodeKind, disease
from .sampling import MetaPath, SampledTree, sample_tree, virtual_user


@dataclass
class TreeBatch:
    """Padded index/mask arrays for same-path trees.

    ``idx[h]``/``mask[h]`` (1-based hop h) have shape (B, w_1, ..., w_h);
    masked-out slots point at row 0 and are zeroed before every reduction.
    """

    path: MetaPath
    root_idx: np.ndarray  # (B,), meaningful only for embedded root kinds
    idx: dict[int, np.ndarray]
    mask: dict[int, np.ndarray]

    @property
    def size(self) -> int:
        return len(self.root_idx)


def batch_trees(trees: list[SampledTree]) -> TreeBatch:
    path = trees[0].path
    depth = path.depth
    widths = []
    for h in range(depth):
        w = 0
        for t in trees:
            if t.layers[h]:
                w = max(w, max(len(c) for c in t.layers[h]))
        widths.append(max(w, 1))

    B = len(trees)
    idx = {}
    mask = {}
    for h in range(1, depth + 1):
        shape = (B, *widths[:h])
        idx[h] = np.zeros(shape, dtype=np.int64)
        mask[h] = np.zeros(shape, dtype=np.float64)

    for b, t in enumerate(trees):
        pos: list[tuple[int, ...]] = [()]
        for h in range(1, depth + 1):
            track = h < depth  # positions only matter while deeper levels exist
            newpos: list[tuple[int, ...]] = []
            ih = idx[h]
            mh = mask[h]
            for parent_i, children in enumerate(t.layers[h - 1]):
                ppos = pos[parent_i]
                k = len(children)
                if k:
                    ih[(b, *ppos, slice(0, k))] = children
                    mh[(b, *ppos, slice(0, k))] = 1.0
                    if track:
                        newpos.extend(ppos + (ci,) for ci in range(k))
            pos = newpos

    root_idx = np.array([t.root.index for t in trees], dtype=np.int64)
    return TreeBatch(path, root_idx, idx, mask)


class DropoutSampler:
    """Sequential source of inverted-scaling dropout masks (train time only)."""

    def __init__(self, p: float, rng: np.random.Generator):
        if not 0.0 <= p < 1.0:
            raise ValueError("dropout probability must be in [0, 1)")
        self.p = p
        self.rng = rng

    def mask(self, shape) -> np.ndarray | float:
        if self.p == 0.0:
            return 1.0
        keep = self.rng.random(shape) >= self.p
        return keep.astype(np.float64) / (1.0 - self.p)


def param_tensors(params: ModelParams) -> dict[str, Tensor]:
    """Wrap every parameter array as an autodiff leaf, canonically named."""
    return {name: Tensor(arr) for name, arr in params.items()}


def _tables(pt: dict[str, Tensor]) -> dict[NodeKind, Tensor]:
    return {NodeKind.DISEASE: pt["dis"], NodeKind.SYMPTOM: pt["sym"]}


def _stack(pt: dict[str, Tensor], prefix: str, depth: int) -> list[tuple[Tensor, Tensor]]:
    return [(pt[f"{prefix}{t}_w1"], pt[f"{prefix}{t}_w2"]) for t in range(depth)]


def _transpose(w: Tensor) -> Tensor:
    out = Tensor(w.data.T, (w,))

    def back(g):
        w._accum(g.T)

    out._backward = back
    return out


def _masked_mean(
    x: Tensor, mask: np.ndarray, axis: int, drop: DropoutSampler | None = None
) -> Tensor:
    """Mean of x over ``axis`` counting only masked-in slots; empty -> 0.

    The mask, the reciprocal count, and (when given) a dropout mask fold
    into one constant multiplier so the tape sees a single elementwise op.
    """
    cnt = mask.sum(axis=axis, keepdims=True)
    coef = (mask / np.maximum(cnt, 1.0))[..., None]
    if drop is not None and drop.p > 0.0:
        coef = drop.mask(x.shape) * coef
    return (x * coef).sum(axis=axis)


def forward_tree_batch(
    pt: dict[str, Tensor],
    weights: list[tuple[Tensor, Tensor]],
    batch: TreeBatch,
    drop: DropoutSampler | None = None,
) -> Tensor:
    """Batched bottom-up tree evaluation; returns (B, dim) final embeddings."""
    path = batch.path
    depth = path.depth
    if len(weights) != depth:
        raise ValueError(f"need {depth} weight steps, got {len(weights)}")
    tables = _tables(pt)

    def dmask(shape):
        return 1.0 if drop is None or drop.p == 0.0 else drop.mask(shape)

    leaf_kind = path.hop_kinds[depth - 1]
    vals = ad.gather(tables[leaf_kind], batch.idx[depth])

    for h in range(depth - 1, -1, -1):
        kind = path.hop_kinds[h - 1] if h >= 1 else path.root_kind
        w1, w2 = weights[h]
        w1t, w2t = _transpose(w1), _transpose(w2)
        child_mask = batch.mask[h + 1]
        child_axis = h + 1
        if kind == NodeKind.USER:
            vals = _masked_mean(vals @ w1t, child_mask, child_axis, drop)
        else:
            if h >= 1:
                base = ad.gather(tables[kind], batch.idx[h])
            else:
                base = ad.gather(tables[kind], batch.root_idx)
            base_exp = base.reshape(*base.shape[:-1], 1, base.shape[-1])
            msgs = (vals @ w1t) + ((base_exp * vals) @ w2t)
            agg = _masked_mean(msgs, child_mask, child_axis, drop)
            self_msg = (base @ w1t) * dmask(base.shape)
            vals = ad.tanh(self_msg + agg)
    return vals


def forward_usu_batch(pt, params: ModelParams, batch: TreeBatch, drop=None) -> Tensor:
    return forward_tree_batch(pt, _stack(pt, "usu", len(params.usu_weights)), batch, drop)


def forward_dsd_batch(pt, params: ModelParams, batch: TreeBatch, drop=None) -> Tensor:
    return forward_tree_batch(pt, _stack(pt, "dsd", len(params.dsd_weights)), batch, drop)


# -- inductive ranking --------------------------------------------------------


def user_evidence_tree(
    g: HeteroGraph, evidence: list[int], usu_path: MetaPath, seed: int
) -> SampledTree:
    """Query tree for a cold-start user: all evidence symptoms at hop 1."""
    if not evidence:
        raise EmptyEvidenceError("ranking requires at least one symptom")
    view = g.user_free_view()
    caps = (max(usu_path.caps[0], len(evidence)),) + usu_path.caps[1:]
    return sample_tree(view, virtual_user(view), usu_path.with_caps(caps), seed, hop1=evidence)


def serving_path(path: MetaPath, g: HeteroGraph) -> MetaPath:
    """Serving trees take every neighbor at every hop (no sampling).

    Capped uniform sampling is an unbiased estimator of the full
    neighborhood mean, so the capped training regime optimizes for exactly
    this deterministic serving input.
    """
    caps = tuple(
        max(cap, g.count(kind)) for cap, kind in zip(path.caps, path.hop_kinds)
    )
    return path.with_caps(caps)


def disease_profiles(
    params: ModelParams, g: HeteroGraph, seed: int, variant: GcnVariant
) -> np.ndarray:
    """Final embeddings of every disease, (|D|, dim)."""
    n = g.count(NodeKind.DISEASE)
    if variant.dsd_path is None:
        return params.embeddings.diseases.copy()
    view = g.user_free_view()
    path = serving_path(variant.dsd_path, g)
    pt = param_tensors(params)
    out = np.empty((n, params.dim))
    for start in range(0, n, 64):  # chunked: uncapped trees are wide
        trees = [
            sample_tree(view, disease(i), path, seed)
            for i in range(start, min(start + 64, n))
        ]
        out[start : start + len(trees)] = forward_dsd_batch(
            pt, params, batch_trees(trees)
        ).data
    return out


def user_profile(
    params: ModelParams, g: HeteroGraph, evidence: list[int], seed: int, variant: GcnVariant
) -> np.ndarray:
    """Final embedding of a cold-start query user, (dim,)."""
    n_sym = g.count(NodeKind.SYMPTOM)
    for s in evidence:
        if not 0 <= s < n_sym:
            raise NotFoundError(f"unknown symptom index {s}")
    tree = user_evidence_tree(g, sorted(set(evidence)), variant.usu_path, seed)
    pt = param_tensors(params)
    return forward_usu_batch(pt, params, batch_trees([tree])).data[0]


def user_profiles_batch(
    params: ModelParams,
    g: HeteroGraph,
    evidence_lists: list[list[int]],
    seed: int,
    variant: GcnVariant,
) -> np.ndarray:
    """Final embeddings for many cold-start queries at once, (B, dim)."""
    trees = [
        user_evidence_tree(g, sorted(set(ev)), variant.usu_path, seed)
        for ev in evidence_lists
    ]
    pt = param_tensors(params)
    return forward_usu_batch(pt, params, batch_trees(trees)).data


def rank_from_profiles(profiles: np.ndarray, qu: np.ndarray) -> list[tuple[int, float]]:
    """Descending scores, ties broken by ascending disease index."""
    scores = profiles @ qu
    order = np.lexsort((np.arange(len(scores)), -scores))
    return [(int(i), float(scores[i])) for i in order]


def rank_diseases(
    params: ModelParams,
    g: HeteroGraph,
    user_symptoms,
    seed: int,
    variant: GcnVariant | None = None,
) -> list[tuple[int, float]]:
    """Score every disease for a symptom set; purely inductive.

    Output is identical whether or not any users are stored in ``g``: the
    forward passes run against the user-free view of the graph.
    """
    variant = variant or FULL
    evidence = sorted(set(int(s) for s in user_symptoms))
    profiles = disease_profiles(params, g, seed, variant)
    qu = user_profile(params, g, evidence, seed, variant)
    return rank_from_profiles(profiles, qu)
