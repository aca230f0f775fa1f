"""Hetero message-passing layers with hand-written backward passes.

Each layer updates the node types that appear as a destination of at least
one of its relations; per-relation outputs for the same destination type are
combined by mean. Aggregation works on per-destination compressed adjacency
(edges grouped by destination), so forward and backward cost O(E d).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..hetero import HeteroGraph
from ..schema import NodeType, Relation
from .ops import leaky_relu, leaky_relu_backward, linear, linear_backward, relu, relu_backward
from .params import ParameterSet, init_uniform

__all__ = [
    "RelationAdjacency",
    "incoming_adjacency",
    "segment_sum",
    "segment_softmax",
    "SageLayer",
    "GatLayer",
    "RgcnLayer",
]

LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class RelationAdjacency:
    """Edges of one relation grouped by destination node."""

    relation: Relation
    indptr: np.ndarray  # (n_dst + 1,)
    src_ids: np.ndarray  # (E,) source id per edge, grouped by destination
    dst_ids: np.ndarray  # (E,) destination id per edge, ascending
    deg: np.ndarray  # (n_dst,) in-degree


def incoming_adjacency(g: HeteroGraph, relations: list[Relation] | None = None) -> dict[str, RelationAdjacency]:
    adj: dict[str, RelationAdjacency] = {}
    for rel in relations if relations is not None else g.relations:
        edges = g.edge_array(rel.name)
        n_dst = g.num_nodes(rel.dst)
        order = np.lexsort((edges[:, 0], edges[:, 1]))
        src = edges[order, 0]
        dst = edges[order, 1]
        deg = np.bincount(dst, minlength=n_dst)
        indptr = np.concatenate([[0], np.cumsum(deg)])
        adj[rel.name] = RelationAdjacency(rel, indptr, src, dst, deg)
    return adj


def segment_sum(vals: np.ndarray, indptr: np.ndarray) -> np.ndarray:
    """Sum rows of ``vals`` within each indptr segment; empty segments are 0."""
    n = indptr.shape[0] - 1
    if vals.shape[0] == 0:
        return np.zeros((n,) + vals.shape[1:], dtype=np.float64)
    starts = np.minimum(indptr[:-1], vals.shape[0] - 1)
    out = np.add.reduceat(vals, starts, axis=0).astype(np.float64, copy=False)
    out[np.diff(indptr) == 0] = 0.0
    return out


def segment_softmax(logits: np.ndarray, indptr: np.ndarray, dst_ids: np.ndarray) -> np.ndarray:
    """Softmax over each destination's edge block."""
    if logits.shape[0] == 0:
        return logits.copy()
    starts = np.minimum(indptr[:-1], logits.shape[0] - 1)
    seg_max = np.maximum.reduceat(logits, starts)
    shifted = np.exp(logits - seg_max[dst_ids])
    denom = segment_sum(shifted[:, None], indptr)[:, 0]
    return shifted / denom[dst_ids]


def _segment_mean(src_feats: np.ndarray, rg: RelationAdjacency) -> np.ndarray:
    agg = segment_sum(src_feats[rg.src_ids], rg.indptr)
    scale = np.where(rg.deg > 0, rg.deg, 1).astype(np.float64)
    return agg / scale[:, None]


def _scatter_mean_backward(
    grad_agg: np.ndarray, rg: RelationAdjacency, grad_src: np.ndarray
) -> None:
    if rg.src_ids.shape[0] == 0:
        return
    scale = np.where(rg.deg > 0, rg.deg, 1).astype(np.float64)
    per_edge = grad_agg[rg.dst_ids] / scale[rg.dst_ids, None]
    np.add.at(grad_src, rg.src_ids, per_edge)


def _group_by_dst(relations: list[Relation]) -> dict[NodeType, list[Relation]]:
    by_dst: dict[NodeType, list[Relation]] = {}
    for rel in relations:
        by_dst.setdefault(rel.dst, []).append(rel)
    return by_dst


class SageLayer:
    """Mean-aggregator layer: per relation, the in-neighbor mean is
    concatenated with the destination's own features and linearly mapped;
    nodes without in-neighbors use a zero aggregate."""

    def __init__(
        self,
        name: str,
        relations: list[Relation],
        in_dims: dict[NodeType, int],
        out_dim: int,
        *,
        activation: bool = True,
    ) -> None:
        self.name = name
        self.relations = list(relations)
        self.in_dims = dict(in_dims)
        self.out_dim = out_dim
        self.activation = activation
        self.by_dst = _group_by_dst(self.relations)

    def init_params(self, params: ParameterSet, seed: int) -> None:
        for rel in self.relations:
            d = self.in_dims[rel.dst] + self.in_dims[rel.src]
            wtag = f"{self.name}/{rel.name}/W"
            btag = f"{self.name}/{rel.name}/b"
            params.add(wtag, init_uniform((d, self.out_dim), d, seed, wtag))
            params.add(btag, init_uniform((self.out_dim,), d, seed, btag))

    def forward(
        self,
        params: ParameterSet,
        adj: dict[str, RelationAdjacency],
        feats: dict[NodeType, np.ndarray],
    ) -> tuple[dict[NodeType, np.ndarray], dict]:
        out: dict[NodeType, np.ndarray] = {}
        cache: dict = {}
        for t, rels in self.by_dst.items():
            acc = np.zeros((feats[t].shape[0], self.out_dim))
            rel_caches = []
            for rel in rels:
                rg = adj[rel.name]
                agg = _segment_mean(feats[rel.src], rg)
                concat = np.hstack([feats[t], agg])
                y, lin_cache = linear(concat, params[f"{self.name}/{rel.name}/W"], params[f"{self.name}/{rel.name}/b"])
                acc += y
                rel_caches.append((rel, rg, lin_cache))
            acc /= len(rels)
            mask = None
            if self.activation:
                acc, mask = relu(acc)
            out[t] = acc
            cache[t] = (rel_caches, mask)
        return out, cache

    def backward(
        self,
        params: ParameterSet,
        cache: dict,
        grad_out: dict[NodeType, np.ndarray],
        feats: dict[NodeType, np.ndarray],
    ) -> tuple[dict[str, np.ndarray], dict[NodeType, np.ndarray]]:
        grads: dict[str, np.ndarray] = {}
        grad_feats = {t: np.zeros_like(f) for t, f in feats.items()}
        for t, g in grad_out.items():
            rel_caches, mask = cache[t]
            if mask is not None:
                g = relu_backward(g, mask)
            g = g / len(rel_caches)
            d_dst = self.in_dims[t]
            for rel, rg, lin_cache in rel_caches:
                gx, gw, gb = linear_backward(g, lin_cache)
                grads[f"{self.name}/{rel.name}/W"] = gw
                grads[f"{self.name}/{rel.name}/b"] = gb
                grad_feats[t] += gx[:, :d_dst]
                _scatter_mean_backward(gx[:, d_dst:], rg, grad_feats[rel.src])
        return grads, grad_feats


class GatLayer:
    """Multi-head attention layer. Attention logits use a leaky ReLU of
    source- and destination-side linear forms; the softmax runs over each
    destination's in-edges for the relation. A destination with no in-edges
    falls back to attending to itself through the destination-side map.
    Heads are concatenated when ``concat_heads`` and averaged otherwise."""

    def __init__(
        self,
        name: str,
        relations: list[Relation],
        in_dims: dict[NodeType, int],
        out_dim: int,
        *,
        heads: int = 4,
        concat_heads: bool = True,
        activation: bool = False,
    ) -> None:
        if concat_heads and out_dim % heads != 0:
            raise ValueError(f"output dim {out_dim} not divisible by {heads} heads")
        self.name = name
        self.relations = list(relations)
        self.in_dims = dict(in_dims)
        self.out_dim = out_dim
        self.heads = heads
        self.concat_heads = concat_heads
        self.head_dim = out_dim // heads if concat_heads else out_dim
        self.activation = activation
        self.by_dst = _group_by_dst(self.relations)

    def _names(self, rel: Relation, h: int) -> tuple[str, str, str, str]:
        base = f"{self.name}/{rel.name}/h{h}"
        return f"{base}/Ws", f"{base}/Wd", f"{base}/as", f"{base}/ad"

    def init_params(self, params: ParameterSet, seed: int) -> None:
        for rel in self.relations:
            for h in range(self.heads):
                ws, wd, a_s, a_d = self._names(rel, h)
                params.add(ws, init_uniform((self.in_dims[rel.src], self.head_dim), self.in_dims[rel.src], seed, ws))
                params.add(wd, init_uniform((self.in_dims[rel.dst], self.head_dim), self.in_dims[rel.dst], seed, wd))
                params.add(a_s, init_uniform((self.head_dim,), self.head_dim, seed, a_s))
                params.add(a_d, init_uniform((self.head_dim,), self.head_dim, seed, a_d))

    def forward(
        self,
        params: ParameterSet,
        adj: dict[str, RelationAdjacency],
        feats: dict[NodeType, np.ndarray],
    ) -> tuple[dict[NodeType, np.ndarray], dict]:
        out: dict[NodeType, np.ndarray] = {}
        cache: dict = {}
        for t, rels in self.by_dst.items():
            acc = np.zeros((feats[t].shape[0], self.out_dim))
            rel_caches = []
            for rel in rels:
                rg = adj[rel.name]
                head_caches = []
                head_outs = []
                for h in range(self.heads):
                    ws, wd, a_s, a_d = self._names(rel, h)
                    u = feats[t] @ params[wd]
                    v = feats[rel.src] @ params[ws]
                    raw = u[rg.dst_ids] @ params[a_d] + v[rg.src_ids] @ params[a_s]
                    act, lmask = leaky_relu(raw, LEAKY_SLOPE)
                    alpha = segment_softmax(act, rg.indptr, rg.dst_ids)
                    y = segment_sum(alpha[:, None] * v[rg.src_ids], rg.indptr)
                    isolated = rg.deg == 0
                    y[isolated] = u[isolated]
                    head_outs.append(y)
                    head_caches.append((u, v, alpha, lmask, isolated))
                y_rel = np.hstack(head_outs) if self.concat_heads else sum(head_outs) / self.heads
                acc += y_rel
                rel_caches.append((rel, rg, head_caches))
            acc /= len(rels)
            mask = None
            if self.activation:
                acc, mask = relu(acc)
            out[t] = acc
            cache[t] = (rel_caches, mask)
        return out, cache

    def backward(
        self,
        params: ParameterSet,
        cache: dict,
        grad_out: dict[NodeType, np.ndarray],
        feats: dict[NodeType, np.ndarray],
    ) -> tuple[dict[str, np.ndarray], dict[NodeType, np.ndarray]]:
        grads = {name: np.zeros_like(params[name]) for name in params.names() if name.startswith(self.name + "/")}
        grad_feats = {t: np.zeros_like(f) for t, f in feats.items()}
        for t, g_all in grad_out.items():
            rel_caches, mask = cache[t]
            if mask is not None:
                g_all = relu_backward(g_all, mask)
            g_all = g_all / len(rel_caches)
            for rel, rg, head_caches in rel_caches:
                for h in range(self.heads):
                    ws, wd, a_s, a_d = self._names(rel, h)
                    u, v, alpha, lmask, isolated = head_caches[h]
                    if self.concat_heads:
                        g = g_all[:, h * self.head_dim : (h + 1) * self.head_dim]
                    else:
                        g = g_all / self.heads
                    gu = np.zeros_like(u)
                    gv = np.zeros_like(v)
                    gu[isolated] = g[isolated]
                    if rg.src_ids.shape[0]:
                        g_edge = g[rg.dst_ids]  # (E, d_h)
                        v_edge = v[rg.src_ids]
                        g_alpha = np.einsum("ij,ij->i", g_edge, v_edge)
                        np.add.at(gv, rg.src_ids, alpha[:, None] * g_edge)
                        seg_dot = segment_sum((alpha * g_alpha)[:, None], rg.indptr)[:, 0]
                        g_act = alpha * (g_alpha - seg_dot[rg.dst_ids])
                        g_raw = leaky_relu_backward(g_act, lmask, LEAKY_SLOPE)
                        grads[a_d] += u[rg.dst_ids].T @ g_raw
                        grads[a_s] += v[rg.src_ids].T @ g_raw
                        np.add.at(gu, rg.dst_ids, np.outer(g_raw, params[a_d]))
                        np.add.at(gv, rg.src_ids, np.outer(g_raw, params[a_s]))
                    grads[wd] += feats[t].T @ gu
                    grad_feats[t] += gu @ params[wd].T
                    grads[ws] += feats[rel.src].T @ gv
                    grad_feats[rel.src] += gv @ params[ws].T
        return grads, grad_feats


class RgcnLayer:
    """Per-relation weights over degree-normalized neighbor sums plus a
    per-type self transform; no basis decomposition."""

    def __init__(
        self,
        name: str,
        relations: list[Relation],
        in_dims: dict[NodeType, int],
        out_dim: int,
        *,
        activation: bool = True,
    ) -> None:
        self.name = name
        self.relations = list(relations)
        self.in_dims = dict(in_dims)
        self.out_dim = out_dim
        self.activation = activation
        self.by_dst = _group_by_dst(self.relations)

    def init_params(self, params: ParameterSet, seed: int) -> None:
        for t in self.by_dst:
            tag = f"{self.name}/self/{t.value}/W"
            params.add(tag, init_uniform((self.in_dims[t], self.out_dim), self.in_dims[t], seed, tag))
        for rel in self.relations:
            tag = f"{self.name}/{rel.name}/W"
            params.add(tag, init_uniform((self.in_dims[rel.src], self.out_dim), self.in_dims[rel.src], seed, tag))

    def forward(
        self,
        params: ParameterSet,
        adj: dict[str, RelationAdjacency],
        feats: dict[NodeType, np.ndarray],
    ) -> tuple[dict[NodeType, np.ndarray], dict]:
        out: dict[NodeType, np.ndarray] = {}
        cache: dict = {}
        for t, rels in self.by_dst.items():
            acc = feats[t] @ params[f"{self.name}/self/{t.value}/W"]
            rel_caches = []
            for rel in rels:
                rg = adj[rel.name]
                agg = _segment_mean(feats[rel.src], rg)
                acc = acc + agg @ params[f"{self.name}/{rel.name}/W"]
                rel_caches.append((rel, rg, agg))
            mask = None
            if self.activation:
                acc, mask = relu(acc)
            out[t] = acc
            cache[t] = (rel_caches, mask)
        return out, cache

    def backward(
        self,
        params: ParameterSet,
        cache: dict,
        grad_out: dict[NodeType, np.ndarray],
        feats: dict[NodeType, np.ndarray],
    ) -> tuple[dict[str, np.ndarray], dict[NodeType, np.ndarray]]:
        grads: dict[str, np.ndarray] = {}
        grad_feats = {t: np.zeros_like(f) for t, f in feats.items()}
        for t, g in grad_out.items():
            rel_caches, mask = cache[t]
            if mask is not None:
                g = relu_backward(g, mask)
            self_tag = f"{self.name}/self/{t.value}/W"
            grads[self_tag] = feats[t].T @ g
            grad_feats[t] += g @ params[self_tag].T
            for rel, rg, agg in rel_caches:
                tag = f"{self.name}/{rel.name}/W"
                grads[tag] = agg.T @ g
                _scatter_mean_backward(g @ params[tag].T, rg, grad_feats[rel.src])
        return grads, grad_feats
