"""Capped, layered neighbor sampling along typed meta-paths.

Trees are sampled uniformly without replacement when a hop's neighbor count
exceeds its cap, take every neighbor otherwise, and never step straight back
to a node's own parent.  Sampling is a pure function of
(graph, root, path, seed); child lists are emitted in ascending node order
so downstream summations are canonically ordered.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import EmptyEvidenceError
from .graph import HeteroGraph, NodeId, NodeKind


@dataclass(frozen=True)
class MetaPath:
    """A typed hop sequence with per-hop neighbor caps."""

    name: str
    root_kind: NodeKind
    hop_kinds: tuple[NodeKind, ...]
    caps: tuple[int, ...]

    def __post_init__(self):
        if len(self.hop_kinds) != len(self.caps):
            raise ValueError("caps length must equal hop count")
        if any(c <= 0 for c in self.caps):
            raise ValueError("caps must be positive")

    @property
    def depth(self) -> int:
        return len(self.hop_kinds)

    def with_caps(self, caps) -> "MetaPath":
        return MetaPath(self.name, self.root_kind, self.hop_kinds, tuple(caps))

    def truncated(self, depth: int) -> "MetaPath":
        """First ``depth`` hops only (used by the one-hop ablation)."""
        if not 1 <= depth <= self.depth:
            raise ValueError(f"depth must be in [1, {self.depth}]")
        return MetaPath(
            self.name, self.root_kind, self.hop_kinds[:depth], self.caps[:depth]
        )


USU = MetaPath(
    "USU",
    NodeKind.USER,
    (NodeKind.SYMPTOM, NodeKind.USER, NodeKind.SYMPTOM),
    (5, 5, 5),
)
DSD = MetaPath("DSD", NodeKind.DISEASE, (NodeKind.SYMPTOM, NodeKind.DISEASE), (20, 5))
SDS = MetaPath("SDS", NodeKind.SYMPTOM, (NodeKind.DISEASE, NodeKind.SYMPTOM), (20, 10))

_PATH_CODE = {"USU": 1, "DSD": 2, "SDS": 3}


@dataclass
class SampledTree:
    """Layered neighbor tree rooted at ``root``.

    ``layers[h]`` holds one child array per node of the previous layer
    (layer -1 being the root alone), each ascending.  A node with no
    eligible children keeps an empty array.
    """

    root: NodeId
    path: MetaPath
    layers: list[list[np.ndarray]]
    seed: int

    def flat(self, hop: int) -> list[int]:
        """All hop-``hop`` nodes in traversal order (1-based hop)."""
        out: list[int] = []
        for children in self.layers[hop - 1]:
            out.extend(int(c) for c in children)
        return out

    def width(self, hop: int) -> int:
        return sum(len(c) for c in self.layers[hop - 1])


def virtual_user(g: HeteroGraph) -> NodeId:
    """A user handle guaranteed not to collide with any stored user."""
    return NodeId(NodeKind.USER, g.count(NodeKind.USER))


def tree_rng(seed: int, path: MetaPath, root: NodeId) -> np.random.Generator:
    return np.random.default_rng(
        [seed & 0xFFFFFFFFFFFFFFFF, _PATH_CODE[path.name], int(root.kind), root.index]
    )


def _sample_children(
    rng: np.random.Generator, candidates: np.ndarray, exclude: int | None, cap: int
) -> np.ndarray:
    skip = -1
    if exclude is not None:
        pos = int(np.searchsorted(candidates, exclude))
        if pos < len(candidates) and candidates[pos] == exclude:
            skip = pos
    n = len(candidates) - (skip >= 0)
    if n <= cap:
        if skip >= 0:
            return np.concatenate((candidates[:skip], candidates[skip + 1 :]))
        return candidates
    # cap smallest random keys = uniform sample without replacement
    keys = rng.random(len(candidates))
    if skip >= 0:
        keys[skip] = np.inf
    picked = candidates[np.argpartition(keys, cap)[:cap]]
    picked.sort()
    return picked


def sample_tree(
    g: HeteroGraph,
    root: NodeId,
    path: MetaPath,
    seed: int,
    hop1: list[int] | None = None,
) -> SampledTree:
    """Sample a layered tree for ``root`` along ``path``.

    ``hop1`` supplies virtual first-hop edges for a cold-start user root
    (the root need not exist in the graph in that case); the hop-1 cap
    still applies to it.
    """
    if root.kind != path.root_kind:
        raise TypeError(
            f"root kind {root.kind.name} does not match path {path.name} "
            f"root kind {path.root_kind.name}"
        )
    rng = tree_rng(seed, path, root)

    if hop1 is not None:
        first = np.array(sorted(set(hop1)), dtype=np.int64)
    else:
        first = g.neighbors(root, path.hop_kinds[0])
    if path.root_kind == NodeKind.USER and len(first) == 0:
        raise EmptyEvidenceError("user root has no symptoms")

    layers: list[list[np.ndarray]] = [[_sample_children(rng, first, None, path.caps[0])]]
    # frontier: (node, parent) pairs of the layer just produced
    frontier: list[tuple[int, int]] = [(int(n), root.index) for n in layers[0][0]]

    for hop in range(1, path.depth):
        child_kind = path.hop_kinds[hop]
        node_kind = path.hop_kinds[hop - 1]
        parent_kind = path.hop_kinds[hop - 2] if hop >= 2 else path.root_kind
        same_kind = child_kind == parent_kind
        expand_further = hop < path.depth - 1
        layer: list[np.ndarray] = []
        next_frontier: list[tuple[int, int]] = []
        for node, parent in frontier:
            candidates = g.neighbors(NodeId(node_kind, node), child_kind)
            exclude = parent if same_kind else None
            children = _sample_children(rng, candidates, exclude, path.caps[hop])
            layer.append(children)
            if expand_further:
                next_frontier.extend((c, node) for c in children.tolist())
        layers.append(layer)
        frontier = next_frontier

    return SampledTree(root, path, layers, seed)
