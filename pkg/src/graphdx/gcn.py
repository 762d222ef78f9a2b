"""Model parameters and reference (per-tree) graph-convolution operations.

The functions here operate on single vectors and single sampled trees and
define the semantics the vectorized forwards in :mod:`graphdx.forward`
must match: messages are ``W1 q_next + W2 (q ⊙ q_next)``, a layer is the
tanh of the self-projection plus the mean message, and user nodes (which
own no embedding) are plain means of ``W1``-projected symptom values.

Summation is canonicalized by ascending node index so every forward output
is reproducible under any permutation of the input neighbor lists.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import EmptyEvidenceError, ShapeError
from .graph import NodeKind
from .sampling import DSD, USU, MetaPath, SampledTree

DEFAULT_DIM = 64


@dataclass
class LayerWeights:
    """One propagation step's projection pair."""

    w1: np.ndarray
    w2: np.ndarray

    def __post_init__(self):
        if self.w1.shape != self.w2.shape or self.w1.ndim != 2:
            raise ShapeError("layer weights must be equal square matrices")


@dataclass
class EmbeddingTable:
    """Trainable base vectors for diseases and symptoms; users have none."""

    diseases: np.ndarray  # (|D|, dim)
    symptoms: np.ndarray  # (|S|, dim)

    @property
    def dim(self) -> int:
        return self.diseases.shape[1]

    def row(self, kind: NodeKind, index: int) -> np.ndarray:
        if kind == NodeKind.DISEASE:
            return self.diseases[index]
        if kind == NodeKind.SYMPTOM:
            return self.symptoms[index]
        raise ShapeError("users have no base embedding")


@dataclass
class ModelParams:
    """Embeddings plus per-step weight stacks, one stack per meta-path.

    The ranking model uses the USU and DSD stacks; the retrieval trainer
    owns parameter sets whose SDS stack is populated instead.
    """

    embeddings: EmbeddingTable
    usu_weights: list[LayerWeights] = field(default_factory=list)
    dsd_weights: list[LayerWeights] = field(default_factory=list)
    sds_weights: list[LayerWeights] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.embeddings.dim

    def items(self):
        """(name, array) pairs in canonical order."""
        yield "dis", self.embeddings.diseases
        yield "sym", self.embeddings.symptoms
        for prefix, stack in (
            ("usu", self.usu_weights),
            ("dsd", self.dsd_weights),
            ("sds", self.sds_weights),
        ):
            for t, w in enumerate(stack):
                yield f"{prefix}{t}_w1", w.w1
                yield f"{prefix}{t}_w2", w.w2

    def copy(self) -> "ModelParams":
        return ModelParams(
            EmbeddingTable(self.embeddings.diseases.copy(), self.embeddings.symptoms.copy()),
            [LayerWeights(w.w1.copy(), w.w2.copy()) for w in self.usu_weights],
            [LayerWeights(w.w1.copy(), w.w2.copy()) for w in self.dsd_weights],
            [LayerWeights(w.w1.copy(), w.w2.copy()) for w in self.sds_weights],
        )

    def scalar_count(self) -> int:
        return sum(arr.size for _, arr in self.items())


def init_params(
    n_diseases: int,
    n_symptoms: int,
    dim: int = DEFAULT_DIM,
    seed: int = 0,
    usu_depth: int = 3,
    dsd_depth: int = 2,
) -> ModelParams:
    """Uniform(-1/sqrt(dim), 1/sqrt(dim)) initialization of all parameters."""
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0xD1])
    bound = 1.0 / np.sqrt(dim)

    def u(*shape):
        return rng.uniform(-bound, bound, size=shape)

    return ModelParams(
        EmbeddingTable(u(n_diseases, dim), u(n_symptoms, dim)),
        [LayerWeights(u(dim, dim), u(dim, dim)) for _ in range(usu_depth)],
        [LayerWeights(u(dim, dim), u(dim, dim)) for _ in range(dsd_depth)],
    )


# -- reference operations ----------------------------------------------------


def _check_dim(*vecs, dim=None):
    for v in vecs:
        if v.ndim != 1:
            raise ShapeError("expected a vector")
        if dim is not None and v.shape[0] != dim:
            raise ShapeError(f"expected dim {dim}, got {v.shape[0]}")
        dim = v.shape[0]
    return dim


def message(qv: np.ndarray, qv_next: np.ndarray, w: LayerWeights) -> np.ndarray:
    """Neighbor message into a node that owns a base embedding."""
    _check_dim(qv, qv_next, dim=w.w1.shape[0])
    return w.w1 @ qv_next + w.w2 @ (qv * qv_next)


def propagate_layer(
    qv: np.ndarray, neighbor_embs: list[np.ndarray], w: LayerWeights
) -> np.ndarray:
    """One propagation step onto a symptom/disease node.

    With no neighbors the node keeps its self-message only: tanh(W1 qv).
    """
    _check_dim(qv, dim=w.w1.shape[0])
    self_msg = w.w1 @ qv
    if not neighbor_embs:
        return np.tanh(self_msg)
    acc = np.zeros_like(self_msg)
    for q in neighbor_embs:
        acc = acc + message(qv, q, w)
    return np.tanh(self_msg + acc * (1.0 / len(neighbor_embs)))


def aggregate_user(symptom_embs: list[np.ndarray], w: LayerWeights) -> np.ndarray:
    """User value as the mean of W1-projected symptom values (no activation)."""
    if not symptom_embs:
        raise EmptyEvidenceError("cannot aggregate a user with no symptoms")
    acc = np.zeros(w.w1.shape[0])
    for q in symptom_embs:
        _check_dim(q, dim=w.w1.shape[0])
        acc = acc + w.w1 @ q
    return acc * (1.0 / len(symptom_embs))


def canonicalize_tree(tree: SampledTree) -> SampledTree:
    """Sort every child list (with its attached subtree) by node index."""

    depth = tree.path.depth
    cursors = [0] * (depth + 1)

    def build(h: int, idx: int):
        if h == depth:
            return (idx, [])
        j = cursors[h]
        cursors[h] += 1
        kids = tree.layers[h][j]
        return (idx, [build(h + 1, k) for k in kids])

    root = build(0, tree.root.index)

    def sort_rec(node):
        idx, kids = node
        kids = sorted((sort_rec(k) for k in kids), key=lambda n: n[0])
        return (idx, kids)

    root = sort_rec(root)
    layers: list[list[np.ndarray]] = [[] for _ in range(depth)]
    frontier = [root]
    for h in range(depth):
        nxt = []
        for _, kids in frontier:
            layers[h].append(np.array([k[0] for k in kids], dtype=np.int64))
            nxt.extend(kids)
        frontier = nxt
    return SampledTree(tree.root, tree.path, layers, tree.seed)


def eval_tree(params: ModelParams, weights: list[LayerWeights], tree: SampledTree) -> np.ndarray:
    """Bottom-up evaluation of one sampled tree.

    Leaves take base embeddings; user levels aggregate; symptom/disease
    levels propagate.  A non-root user with no children contributes a zero
    vector (it sends a zero message but still counts in its parent's mean).
    """
    tree = canonicalize_tree(tree)
    path = tree.path
    depth = path.depth
    if len(weights) != depth:
        raise ShapeError(f"need {depth} weight steps, got {len(weights)}")
    emb = params.embeddings
    dim = emb.dim

    leaf_kind = path.hop_kinds[depth - 1]
    if leaf_kind == NodeKind.USER:
        raise ShapeError("meta-path may not end on a user level")
    cur = [emb.row(leaf_kind, i).copy() for i in tree.flat(depth)]

    for h in range(depth - 1, 0, -1):
        kind = path.hop_kinds[h - 1]
        nodes = tree.flat(h)
        child_lists = tree.layers[h]
        step = weights[h]
        nxt = []
        pos = 0
        for j, node in enumerate(nodes):
            k = len(child_lists[j])
            child_vals = cur[pos : pos + k]
            pos += k
            if kind == NodeKind.USER:
                if k == 0:
                    nxt.append(np.zeros(dim))
                else:
                    nxt.append(aggregate_user(child_vals, step))
            else:
                nxt.append(propagate_layer(emb.row(kind, node), child_vals, step))
        cur = nxt

    if path.root_kind == NodeKind.USER:
        if not cur:
            raise EmptyEvidenceError("user root has no symptom evidence")
        return aggregate_user(cur, weights[0])
    return propagate_layer(emb.row(path.root_kind, tree.root.index), cur, weights[0])


def forward_usu(params: ModelParams, tree: SampledTree) -> np.ndarray:
    """Final user embedding from a USU-family tree."""
    if tree.path.root_kind != NodeKind.USER:
        raise TypeError("forward_usu requires a user-rooted tree")
    return eval_tree(params, params.usu_weights, tree)


def forward_dsd(params: ModelParams, tree: SampledTree) -> np.ndarray:
    """Final disease embedding from a DSD-family tree."""
    if tree.path.root_kind != NodeKind.DISEASE:
        raise TypeError("forward_dsd requires a disease-rooted tree")
    return eval_tree(params, params.dsd_weights, tree)


def score(qu: np.ndarray, qd: np.ndarray) -> float:
    """Inner-product affinity between a user and a disease embedding."""
    _check_dim(qu, qd)
    return float(qu @ qd)


@dataclass(frozen=True)
class GcnVariant:
    """Meta-path configuration for the full model and its ablations."""

    name: str
    usu_path: MetaPath
    dsd_path: MetaPath | None  # None means raw disease embeddings

    @property
    def usu_depth(self) -> int:
        return self.usu_path.depth

    @property
    def dsd_depth(self) -> int:
        return 0 if self.dsd_path is None else self.dsd_path.depth


FULL = GcnVariant("full", USU, DSD)
LOCAL = GcnVariant("local", USU.truncated(1), DSD.truncated(1))
USU_ONLY = GcnVariant("usu_only", USU, None)
DSD_ONLY = GcnVariant("dsd_only", USU.truncated(1), DSD)

VARIANTS = {v.name: v for v in (FULL, LOCAL, USU_ONLY, DSD_ONLY)}


def variant_with_caps(variant: GcnVariant, caps_cfg: dict) -> GcnVariant:
    """Apply ``[caps]`` config overrides (keys ``usu``/``dsd``) to a variant."""
    usu = variant.usu_path
    dsd = variant.dsd_path
    if "usu" in caps_cfg:
        usu = usu.with_caps(tuple(caps_cfg["usu"])[: usu.depth])
    if dsd is not None and "dsd" in caps_cfg:
        dsd = dsd.with_caps(tuple(caps_cfg["dsd"])[: dsd.depth])
    return GcnVariant(variant.name, usu, dsd)
