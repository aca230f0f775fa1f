"""Typed heterogeneous graph: construction, reverse edges, splits, negatives.

Graphs are immutable; every operation returns a new value. Adjacency is
stored per relation in compressed sparse rows keyed by source id, with
destination ids sorted inside each row, so edge order is canonical and
independent of input order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .matrix import FeatureMatrix
from .rng import stream
from .schema import NodeType, Relation, HAS_IMAGE, reverse_relation

__all__ = [
    "GraphError",
    "DanglingEndpointError",
    "RelationCollisionError",
    "MissingRelationError",
    "SaturationError",
    "SplitError",
    "HeteroGraph",
    "EdgeSplit",
    "build_graph",
    "add_reverse_edges",
    "split_edges",
    "sample_negatives",
    "strip_relations",
    "sample_image_edges",
    "replace_edges",
    "round_half_up",
]


class GraphError(ValueError):
    """Base error for graph construction and manipulation."""


class DanglingEndpointError(GraphError):
    pass


class RelationCollisionError(GraphError):
    pass


class MissingRelationError(GraphError):
    pass


class SaturationError(GraphError):
    pass


class SplitError(GraphError):
    pass


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _as_edge_array(edges) -> np.ndarray:
    arr = np.asarray(edges, dtype=np.int64)
    if arr.size == 0:
        return arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GraphError(f"edge table must have shape (n, 2), got {arr.shape}")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class HeteroGraph:
    """Immutable typed-node, typed-relation graph with per-source adjacency."""

    node_counts: Mapping[NodeType, int]
    relations: tuple[Relation, ...]
    indptr: Mapping[str, np.ndarray]
    dst_index: Mapping[str, np.ndarray]
    features: Mapping[NodeType, FeatureMatrix] = field(default_factory=dict)

    def relation(self, name: str) -> Relation:
        for rel in self.relations:
            if rel.name == name:
                return rel
        raise MissingRelationError(f"relation {name!r} not in graph")

    def has_relation(self, name: str) -> bool:
        return any(rel.name == name for rel in self.relations)

    def num_nodes(self, node_type: NodeType) -> int:
        return self.node_counts.get(node_type, 0)

    def num_edges(self, name: str) -> int:
        self.relation(name)
        return int(self.dst_index[name].shape[0])

    def csr(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        self.relation(name)
        return self.indptr[name], self.dst_index[name]

    def edge_array(self, name: str) -> np.ndarray:
        """Edges as an (E, 2) array in canonical (src, dst) order."""
        indptr, dst = self.csr(name)
        src = np.repeat(np.arange(indptr.shape[0] - 1, dtype=np.int64), np.diff(indptr))
        return np.column_stack([src, dst])

    def out_degrees(self, name: str) -> np.ndarray:
        indptr, _ = self.csr(name)
        return np.diff(indptr)

    def in_degrees(self, name: str) -> np.ndarray:
        rel = self.relation(name)
        _, dst = self.csr(name)
        return np.bincount(dst, minlength=self.num_nodes(rel.dst))

    def edge_keys(self, name: str) -> np.ndarray:
        """Each edge packed as src * n_dst + dst, sorted ascending."""
        rel = self.relation(name)
        edges = self.edge_array(name)
        keys = edges[:, 0] * self.num_nodes(rel.dst) + edges[:, 1]
        return np.sort(keys)

    def with_features(self, features: Mapping[NodeType, FeatureMatrix]) -> "HeteroGraph":
        return _assemble(self.node_counts, {r: self.edge_array(r.name) for r in self.relations}, features)


def _assemble(
    node_counts: Mapping[NodeType, int],
    rel_edges: Mapping[Relation, np.ndarray],
    features: Mapping[NodeType, FeatureMatrix] | None,
    *,
    dedup_warn: bool = False,
) -> HeteroGraph:
    counts = dict(node_counts)
    for ntype, count in counts.items():
        if not isinstance(ntype, NodeType):
            raise GraphError(f"unknown node type {ntype!r}")
        if count < 0:
            raise GraphError(f"negative node count for {ntype}")

    relations: list[Relation] = []
    indptr: dict[str, np.ndarray] = {}
    dst_index: dict[str, np.ndarray] = {}
    for rel, edges in rel_edges.items():
        if rel.name in indptr:
            raise RelationCollisionError(f"duplicate relation name {rel.name!r}")
        if rel.src not in counts or rel.dst not in counts:
            raise GraphError(f"relation {rel} references a node type without a count")
        edges = _as_edge_array(edges)
        n_src, n_dst = counts[rel.src], counts[rel.dst]
        bad_src = (edges[:, 0] < 0) | (edges[:, 0] >= n_src)
        bad_dst = (edges[:, 1] < 0) | (edges[:, 1] >= n_dst)
        if bad_src.any() or bad_dst.any():
            row = int(np.flatnonzero(bad_src | bad_dst)[0])
            raise DanglingEndpointError(
                f"relation {rel.name!r} row {row}: edge {tuple(edges[row])} out of range "
                f"for {n_src} {rel.src} x {n_dst} {rel.dst} nodes"
            )
        if edges.shape[0]:
            keys = edges[:, 0] * max(n_dst, 1) + edges[:, 1]
            uniq, first = np.unique(keys, return_index=True)
            if dedup_warn and uniq.shape[0] < keys.shape[0]:
                warnings.warn(
                    f"relation {rel.name!r}: dropped {keys.shape[0] - uniq.shape[0]} duplicate edge(s)",
                    stacklevel=3,
                )
            src_sorted = uniq // max(n_dst, 1)
            dst_sorted = uniq % max(n_dst, 1)
        else:
            src_sorted = np.zeros(0, dtype=np.int64)
            dst_sorted = np.zeros(0, dtype=np.int64)
        ptr = np.zeros(n_src + 1, dtype=np.int64)
        np.add.at(ptr, src_sorted + 1, 1)
        np.cumsum(ptr, out=ptr)
        relations.append(rel)
        indptr[rel.name] = _frozen(ptr)
        dst_index[rel.name] = _frozen(dst_sorted)

    feats: dict[NodeType, FeatureMatrix] = {}
    if features:
        for ntype, fm in features.items():
            if fm is None:
                continue
            if fm.rows != counts.get(ntype, 0):
                raise GraphError(
                    f"feature matrix for {ntype} has {fm.rows} rows, expected {counts.get(ntype, 0)}"
                )
            feats[ntype] = fm if fm.node_type == ntype else fm.bind(ntype)

    return HeteroGraph(counts, tuple(relations), indptr, dst_index, feats)


def build_graph(
    node_counts: Mapping[NodeType, int],
    edge_tables: Mapping[Relation, Sequence],
    features: Mapping[NodeType, FeatureMatrix] | None = None,
) -> HeteroGraph:
    """Construct a graph from per-type counts and per-relation edge tables.

    Duplicate (src, dst) pairs within one relation are dropped with a warning
    carrying the count; endpoints outside the declared ranges raise
    DanglingEndpointError naming the offending row.
    """
    rel_edges = {rel: _as_edge_array(edges) for rel, edges in edge_tables.items()}
    return _assemble(node_counts, rel_edges, features, dedup_warn=True)


def _edge_map(g: HeteroGraph) -> dict[Relation, np.ndarray]:
    return {rel: g.edge_array(rel.name) for rel in g.relations}


def add_reverse_edges(g: HeteroGraph, relation: Relation | str) -> HeteroGraph:
    """Add the transposed twin of ``relation``; collides if already present."""
    rel = g.relation(relation if isinstance(relation, str) else relation.name)
    rev = reverse_relation(rel)
    if g.has_relation(rev.name):
        raise RelationCollisionError(f"relation {rev.name!r} already present")
    edges = _edge_map(g)
    edges[rev] = g.edge_array(rel.name)[:, ::-1]
    return _assemble(g.node_counts, edges, g.features)


def strip_relations(g: HeteroGraph, keep: Iterable[Relation | str]) -> HeteroGraph:
    """Drop all relations except ``keep``; node sets are unchanged."""
    names = {k if isinstance(k, str) else k.name for k in keep}
    missing = names - {rel.name for rel in g.relations}
    if missing:
        raise MissingRelationError(f"cannot keep unknown relation(s) {sorted(missing)}")
    edges = {rel: g.edge_array(rel.name) for rel in g.relations if rel.name in names}
    return _assemble(g.node_counts, edges, g.features)


def replace_edges(g: HeteroGraph, relation: Relation | str, edges) -> HeteroGraph:
    """Return a graph identical to ``g`` with one relation's edge set replaced."""
    rel = g.relation(relation if isinstance(relation, str) else relation.name)
    new_edges = _edge_map(g)
    new_edges[rel] = _as_edge_array(edges)
    return _assemble(g.node_counts, new_edges, g.features)


def sample_negatives(
    g: HeteroGraph,
    relation: Relation | str,
    positives,
    ratio: int = 1,
    seed: int = 0,
    *,
    tag: str | None = None,
) -> np.ndarray:
    """Corrupt each positive edge ``ratio`` times, rejecting true edges.

    The destination is redrawn uniformly; a source connected to every
    destination falls back to corrupting the source. Each (positive, copy)
    pair owns its own counter-based stream, so the result is independent of
    iteration order.
    """
    rel = g.relation(relation if isinstance(relation, str) else relation.name)
    positives = _as_edge_array(positives)
    n_src, n_dst = g.num_nodes(rel.src), g.num_nodes(rel.dst)
    if n_src == 0 or n_dst == 0:
        raise SaturationError(f"relation {rel.name!r} has an empty endpoint type")
    keys = g.edge_keys(rel.name)
    total_non_edges = n_src * n_dst - keys.shape[0]
    if total_non_edges < ratio * positives.shape[0]:
        raise SaturationError(
            f"need {ratio * positives.shape[0]} non-edges but only {total_non_edges} exist"
        )
    out_deg = g.out_degrees(rel.name)
    in_deg = g.in_degrees(rel.name)
    tag = tag or f"neg/{rel.name}"

    def is_edge(s: int, d: int) -> bool:
        key = s * n_dst + d
        pos = np.searchsorted(keys, key)
        return pos < keys.shape[0] and keys[pos] == key

    out = np.empty((positives.shape[0] * ratio, 2), dtype=np.int64)
    for i, (s, d) in enumerate(positives):
        s, d = int(s), int(d)
        for r in range(ratio):
            gen = stream(seed, tag, i * ratio + r)
            if out_deg[s] < n_dst:
                while True:
                    cand = int(gen.integers(n_dst))
                    if not is_edge(s, cand):
                        out[i * ratio + r] = (s, cand)
                        break
            elif in_deg[d] < n_src:
                while True:
                    cand = int(gen.integers(n_src))
                    if not is_edge(cand, d):
                        out[i * ratio + r] = (cand, d)
                        break
            else:
                raise SaturationError(
                    f"positive ({s}, {d}) in {rel.name!r} cannot be corrupted: "
                    "both endpoints are saturated"
                )
    return out


@dataclass(frozen=True)
class EdgeSplit:
    """Train/val/test positives plus fixed sampled negatives for one relation."""

    relation: Relation
    train_pos: np.ndarray
    val_pos: np.ndarray
    test_pos: np.ndarray
    train_neg: np.ndarray
    val_neg: np.ndarray
    test_neg: np.ndarray
    seed: int

    def __post_init__(self) -> None:
        for name in ("train_pos", "val_pos", "test_pos", "train_neg", "val_neg", "test_neg"):
            object.__setattr__(self, name, _frozen(_as_edge_array(getattr(self, name))))

    @property
    def n_total(self) -> int:
        return self.train_pos.shape[0] + self.val_pos.shape[0] + self.test_pos.shape[0]


def split_edges(
    g: HeteroGraph,
    relation: Relation | str,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
    neg_ratio: int = 1,
) -> EdgeSplit:
    """Partition a relation's edges into train/val/test and sample negatives.

    Validation and test sizes are rounded half-up from the requested ratios;
    train takes the remainder. Negatives are rejected against the relation's
    full positive edge set, so no split partition ever contains a false
    negative.
    """
    rel = g.relation(relation if isinstance(relation, str) else relation.name)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios must be three nonnegative values summing to 1, got {ratios}")
    edges = g.edge_array(rel.name)
    n = edges.shape[0]
    if n < 10:
        raise SplitError(f"relation {rel.name!r} has {n} edges; need >= 10 to split")
    n_val = round_half_up(n * ratios[1])
    n_test = round_half_up(n * ratios[2])
    n_train = n - n_val - n_test
    if (ratios[1] > 0 and n_val == 0) or (ratios[2] > 0 and n_test == 0) or n_train <= 0:
        raise SplitError(f"cannot honor split ratios {ratios} with {n} edges")
    perm = stream(seed, f"split/{rel.name}").permutation(n)
    train = edges[np.sort(perm[:n_train])]
    val = edges[np.sort(perm[n_train : n_train + n_val])]
    test = edges[np.sort(perm[n_train + n_val :])]
    negs = {
        part: sample_negatives(g, rel, pos, neg_ratio, seed, tag=f"split-neg-{part}/{rel.name}")
        for part, pos in (("train", train), ("val", val), ("test", test))
    }
    return EdgeSplit(rel, train, val, test, negs["train"], negs["val"], negs["test"], seed)


def sample_image_edges(g: HeteroGraph, ratio: float, seed: int = 0) -> HeteroGraph:
    """Keep a uniform fraction of image edges; image nodes that lose all
    their edges are dropped and the remaining ids recompacted."""
    if not 0 < ratio <= 1:
        raise GraphError(f"image sampling ratio must be in (0, 1], got {ratio}")
    rel = g.relation(HAS_IMAGE.name)
    edges = g.edge_array(rel.name)
    n = edges.shape[0]
    keep_n = round_half_up(n * ratio)
    perm = stream(seed, "image-sample").permutation(n)
    kept = edges[np.sort(perm[:keep_n])]

    image_rels = [r for r in g.relations if NodeType.IMAGE in (r.src, r.dst)]
    touched_before = np.zeros(g.num_nodes(NodeType.IMAGE), dtype=bool)
    touched_after = np.zeros(g.num_nodes(NodeType.IMAGE), dtype=bool)
    for r in image_rels:
        e = kept if r.name == rel.name else g.edge_array(r.name)
        before = g.edge_array(r.name)
        for arr, mask in ((before, touched_before), (e, touched_after)):
            if r.src == NodeType.IMAGE:
                mask[arr[:, 0]] = True
            if r.dst == NodeType.IMAGE:
                mask[arr[:, 1]] = True
    # only nodes the sampling itself isolated are dropped; nodes that were
    # already isolated keep their ids
    keep_node = touched_after | ~touched_before
    old_ids = np.flatnonzero(keep_node)
    remap = -np.ones(g.num_nodes(NodeType.IMAGE), dtype=np.int64)
    remap[old_ids] = np.arange(old_ids.shape[0])

    counts = dict(g.node_counts)
    counts[NodeType.IMAGE] = int(old_ids.shape[0])
    new_edges: dict[Relation, np.ndarray] = {}
    for r in g.relations:
        e = kept.copy() if r.name == rel.name else g.edge_array(r.name).copy()
        if r.src == NodeType.IMAGE:
            e[:, 0] = remap[e[:, 0]]
        if r.dst == NodeType.IMAGE:
            e[:, 1] = remap[e[:, 1]]
        new_edges[r] = e
    features = dict(g.features)
    if NodeType.IMAGE in features:
        features[NodeType.IMAGE] = features[NodeType.IMAGE].take_rows(old_ids)
    return _assemble(counts, new_edges, features)
