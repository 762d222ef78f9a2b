"""Heterogeneous user/symptom/disease graph built from visit records.

Records arrive as line-delimited text, one visit per line:

    user_id<TAB>disease_id[,disease_id...]<TAB>symptom_id[,symptom_id...]

External ids are arbitrary strings mapped to dense per-kind indices in
first-seen order.  Only the edge types (user,symptom), (user,disease) and
(disease,symptom) exist; a disease and a symptom are linked when they
co-occur within one record.  Edge multiplicities count how many records
produced the edge and feed co-occurrence statistics; graph convolution
itself aggregates over distinct neighbors only.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable

import numpy as np

from .exceptions import NotFoundError, ParseError, RecordError
from . import serialize


class NodeKind(IntEnum):
    USER = 0
    SYMPTOM = 1
    DISEASE = 2


@dataclass(frozen=True, order=True)
class NodeId:
    """Typed dense node handle; (kind, index) uniquely identifies a node."""

    kind: NodeKind
    index: int

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("node index must be non-negative")


def user(i: int) -> NodeId:
    return NodeId(NodeKind.USER, i)


def symptom(i: int) -> NodeId:
    return NodeId(NodeKind.SYMPTOM, i)


def disease(i: int) -> NodeId:
    return NodeId(NodeKind.DISEASE, i)


@dataclass(frozen=True)
class VisitRecord:
    """One visit: a user, the diagnosed diseases, and the reported symptoms."""

    user: int
    diseases: tuple[int, ...]
    symptoms: tuple[int, ...]


# Directed edge-type table: (source kind, target kind).
_EDGE_TYPES = (
    (NodeKind.USER, NodeKind.SYMPTOM),
    (NodeKind.USER, NodeKind.DISEASE),
    (NodeKind.DISEASE, NodeKind.SYMPTOM),
)


class _Adjacency:
    """Per (kind -> kind) adjacency with multiplicities, frozen to arrays."""

    def __init__(self):
        self._building: dict[int, dict[int, int]] = {}
        self.neigh: list[np.ndarray] = []
        self.mult: list[np.ndarray] = []

    def add(self, a: int, b: int, count: int = 1):
        row = self._building.setdefault(a, {})
        row[b] = row.get(b, 0) + count

    def freeze(self, n_nodes: int):
        empty_i = np.empty(0, dtype=np.int64)
        for a in range(n_nodes):
            row = self._building.get(a)
            if not row:
                self.neigh.append(empty_i)
                self.mult.append(empty_i)
                continue
            ks = np.array(sorted(row), dtype=np.int64)
            self.neigh.append(ks)
            self.mult.append(np.array([row[int(k)] for k in ks], dtype=np.int64))
        self._building.clear()

    def edge_count(self) -> int:
        return int(sum(len(a) for a in self.neigh))


class HeteroGraph:
    """Immutable typed graph over users, symptoms and diseases.

    Safe for unlimited concurrent readers once constructed.
    """

    def __init__(self, id_maps: dict[NodeKind, list[str]], records: list[VisitRecord]):
        self.ids = {k: list(v) for k, v in id_maps.items()}
        self.index_of = {
            k: {ext: i for i, ext in enumerate(v)} for k, v in self.ids.items()
        }
        self.records = list(records)
        self._adj: dict[tuple[NodeKind, NodeKind], _Adjacency] = {}
        for src, dst in _EDGE_TYPES:
            self._adj[(src, dst)] = _Adjacency()
            self._adj[(dst, src)] = _Adjacency()
        for rec in self.records:
            for s in rec.symptoms:
                self._add_both(NodeKind.USER, rec.user, NodeKind.SYMPTOM, s)
            for d in rec.diseases:
                self._add_both(NodeKind.USER, rec.user, NodeKind.DISEASE, d)
                for s in rec.symptoms:
                    self._add_both(NodeKind.DISEASE, d, NodeKind.SYMPTOM, s)
        for (src, dst), adj in self._adj.items():
            adj.freeze(self.count(src))

    def _add_both(self, ka: NodeKind, a: int, kb: NodeKind, b: int):
        self._adj[(ka, kb)].add(a, b)
        self._adj[(kb, ka)].add(b, a)

    # -- queries ---------------------------------------------------------

    def count(self, kind: NodeKind) -> int:
        return len(self.ids[kind])

    def has_node(self, v: NodeId) -> bool:
        return 0 <= v.index < self.count(v.kind)

    def neighbors(self, v: NodeId, kind: NodeKind) -> np.ndarray:
        """Indices of all ``kind`` nodes adjacent to ``v``, ascending."""
        if not self.has_node(v):
            raise NotFoundError(f"no node {v.kind.name}:{v.index}")
        adj = self._adj.get((v.kind, kind))
        if adj is None:
            return np.empty(0, dtype=np.int64)
        return adj.neigh[v.index]

    def multiplicity(self, v: NodeId, kind: NodeKind, w: int) -> int:
        """Number of records that produced edge (v, kind:w); 0 if absent."""
        if not self.has_node(v):
            raise NotFoundError(f"no node {v.kind.name}:{v.index}")
        adj = self._adj.get((v.kind, kind))
        if adj is None:
            return 0
        ks = adj.neigh[v.index]
        pos = int(np.searchsorted(ks, w))
        if pos < len(ks) and ks[pos] == w:
            return int(adj.mult[v.index][pos])
        return 0

    def edge_count(self, src: NodeKind, dst: NodeKind) -> int:
        return self._adj[(src, dst)].edge_count()

    def user_free_view(self) -> "HeteroGraph":
        """A view of this graph with no user adjacency.

        Inductive inference must be a pure function of the evidence symptoms
        and the disease-symptom backbone, so the ranking path queries the
        graph through this view.
        """
        return _UserFreeView(self)

    def without_users(self) -> "HeteroGraph":
        """A new graph with every user deleted; disease-symptom edges kept."""
        g = object.__new__(HeteroGraph)
        g.ids = {
            NodeKind.USER: [],
            NodeKind.SYMPTOM: list(self.ids[NodeKind.SYMPTOM]),
            NodeKind.DISEASE: list(self.ids[NodeKind.DISEASE]),
        }
        g.index_of = {k: {ext: i for i, ext in enumerate(v)} for k, v in g.ids.items()}
        g.records = []
        g._adj = {}
        for src, dst in _EDGE_TYPES:
            for a, b in ((src, dst), (dst, src)):
                adj = _Adjacency()
                if NodeKind.USER not in (a, b):
                    old = self._adj[(a, b)]
                    adj.neigh = [x.copy() for x in old.neigh]
                    adj.mult = [x.copy() for x in old.mult]
                else:
                    adj.freeze(g.count(a))
                g._adj[(a, b)] = adj
        return g

    # -- serialization ---------------------------------------------------

    def to_bytes(self) -> bytes:
        meta = {
            "ids": {str(int(k)): self.ids[k] for k in NodeKind},
            "records": [
                [r.user, list(r.diseases), list(r.symptoms)] for r in self.records
            ],
        }
        arrays = {}
        for (src, dst), adj in sorted(self._adj.items()):
            tag = f"{int(src)}_{int(dst)}"
            lens = np.array([len(a) for a in adj.neigh], dtype=np.int64)
            arrays[f"len_{tag}"] = lens
            arrays[f"nbr_{tag}"] = (
                np.concatenate(adj.neigh) if adj.neigh else np.empty(0, np.int64)
            )
            arrays[f"mul_{tag}"] = (
                np.concatenate(adj.mult) if adj.mult else np.empty(0, np.int64)
            )
        return serialize.pack("graph", meta, arrays)

    def id_map_digest(self) -> str:
        return serialize.digest(
            serialize.pack("idmap", {str(int(k)): self.ids[k] for k in NodeKind}, {})
        )

    def save(self, path: str | Path):
        Path(path).write_bytes(self.to_bytes())

    @staticmethod
    def load(path: str | Path) -> "HeteroGraph":
        meta, _ = serialize.unpack(Path(path).read_bytes(), "graph")
        id_maps = {NodeKind(int(k)): v for k, v in meta["ids"].items()}
        records = [
            VisitRecord(u, tuple(ds), tuple(ss)) for u, ds, ss in meta["records"]
        ]
        return HeteroGraph(id_maps, records)


class _UserFreeView(HeteroGraph):
    """Read-only facade hiding all user adjacency of a base graph."""

    def __init__(self, base: HeteroGraph):  # no super().__init__: pure delegation
        self._base = base

    def __getattr__(self, name):
        return getattr(self._base, name)

    def count(self, kind: NodeKind) -> int:
        return 0 if kind == NodeKind.USER else self._base.count(kind)

    def has_node(self, v: NodeId) -> bool:
        return False if v.kind == NodeKind.USER else self._base.has_node(v)

    def neighbors(self, v: NodeId, kind: NodeKind) -> np.ndarray:
        if v.kind == NodeKind.USER:
            raise NotFoundError(f"no node USER:{v.index}")
        if kind == NodeKind.USER:
            return np.empty(0, dtype=np.int64)
        return self._base.neighbors(v, kind)

    def user_free_view(self) -> "HeteroGraph":
        return self


def parse_records(lines: Iterable[str]) -> tuple[dict[NodeKind, list[str]], list[VisitRecord]]:
    """Parse record lines into id maps (first-seen order) and visit records."""
    ids: dict[NodeKind, list[str]] = {k: [] for k in NodeKind}
    index: dict[NodeKind, dict[str, int]] = {k: {} for k in NodeKind}

    def intern(kind: NodeKind, ext: str) -> int:
        got = index[kind].get(ext)
        if got is None:
            got = len(ids[kind])
            index[kind][ext] = got
            ids[kind].append(ext)
        return got

    records: list[VisitRecord] = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(line_no, f"expected 3 tab-separated fields, got {len(parts)}")
        user_ext, dis_field, sym_field = parts
        if not user_ext:
            raise ParseError(line_no, "empty user id")
        dis_ext = [x for x in dis_field.split(",") if x]
        sym_ext = [x for x in sym_field.split(",") if x]
        if not dis_ext:
            raise RecordError(line_no, "record has no diseases")
        if not sym_ext:
            raise RecordError(line_no, "record has no symptoms")
        if len(set(dis_ext)) != len(dis_ext):
            raise RecordError(line_no, "duplicate disease id within record")
        if len(set(sym_ext)) != len(sym_ext):
            raise RecordError(line_no, "duplicate symptom id within record")
        u = intern(NodeKind.USER, user_ext)
        ds = tuple(intern(NodeKind.DISEASE, d) for d in dis_ext)
        ss = tuple(intern(NodeKind.SYMPTOM, s) for s in sym_ext)
        records.append(VisitRecord(u, ds, ss))
    return ids, records


def load_records(path: str | Path) -> HeteroGraph:
    """Build a :class:`HeteroGraph` from a record file."""
    with io.open(path, "r", encoding="utf-8") as fh:
        ids, records = parse_records(fh)
    return HeteroGraph(ids, records)


def graph_from_records(ids: dict[NodeKind, list[str]], records: list[VisitRecord]) -> HeteroGraph:
    return HeteroGraph(ids, records)
