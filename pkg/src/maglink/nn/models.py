"""Composed models: the two-layer unsupervised encoder and the supervised
link predictor (type projections + two message-passing layers + dot scores).
"""

from __future__ import annotations

import numpy as np

from ..schema import NodeType, Relation
from .layers import GatLayer, RelationAdjacency, RgcnLayer, SageLayer
from .ops import dropout, dropout_backward, linear, linear_backward
from .params import ParameterSet, init_uniform

__all__ = ["HeteroEncoder", "LinkPredictor", "merge_grads"]


def merge_grads(total: dict[str, np.ndarray], partial: dict[str, np.ndarray]) -> None:
    for name, g in partial.items():
        total[name] += g


def _check_participants(relations: list[Relation], in_dims: dict[NodeType, int]) -> None:
    src_types = {r.src for r in relations}
    dst_types = {r.dst for r in relations}
    missing = (src_types | dst_types) - set(in_dims)
    if missing:
        raise ValueError(f"missing feature matrices for node type(s) {sorted(t.value for t in missing)}")
    src_only = src_types - dst_types
    if src_only:
        raise ValueError(
            f"node type(s) {sorted(t.value for t in src_only)} are sources but never destinations; "
            "add reverse relations so every participating type is updated"
        )


class HeteroEncoder:
    """Two-layer relational encoder used for unsupervised pretraining.

    ``kind`` selects the mean aggregator ("graphsage") or the per-relation
    convolution ("rgcn"). The hidden layer applies ReLU; the output layer is
    linear.
    """

    def __init__(
        self,
        kind: str,
        relations: list[Relation],
        in_dims: dict[NodeType, int],
        dims: tuple[int, int] = (64, 32),
    ) -> None:
        if kind not in ("graphsage", "rgcn"):
            raise ValueError(f"unknown encoder kind {kind!r}")
        _check_participants(relations, in_dims)
        layer_cls = SageLayer if kind == "graphsage" else RgcnLayer
        hidden_dims = {t: dims[0] for t in in_dims}
        self.kind = kind
        self.layer1 = layer_cls("enc1", relations, in_dims, dims[0], activation=True)
        self.layer2 = layer_cls("enc2", relations, hidden_dims, dims[1], activation=False)
        self.out_dim = dims[1]

    def init_params(self, seed: int) -> ParameterSet:
        params = ParameterSet()
        self.layer1.init_params(params, seed)
        self.layer2.init_params(params, seed)
        return params

    def forward(
        self,
        params: ParameterSet,
        adj: dict[str, RelationAdjacency],
        feats: dict[NodeType, np.ndarray],
    ) -> tuple[dict[NodeType, np.ndarray], tuple]:
        h1, c1 = self.layer1.forward(params, adj, feats)
        h2, c2 = self.layer2.forward(params, adj, h1)
        return h2, (feats, h1, c1, c2)

    def backward(
        self, params: ParameterSet, cache: tuple, grad_emb: dict[NodeType, np.ndarray]
    ) -> tuple[dict[str, np.ndarray], dict[NodeType, np.ndarray]]:
        feats, h1, c1, c2 = cache
        total = params.zero_grads()
        g2, gh1 = self.layer2.backward(params, c2, grad_emb, h1)
        merge_grads(total, g2)
        g1, gfeats = self.layer1.backward(params, c1, gh1, feats)
        merge_grads(total, g1)
        return total, gfeats


class LinkPredictor:
    """Supervised hetero-GNN: per-type input projections to the hidden width,
    two message-passing layers, and dot-product edge scores.

    Dropout is applied to projected inputs and between the two layers during
    training; masks are a pure function of (seed, layer, epoch). For the
    attention model, heads are concatenated in the first layer and averaged
    in the output layer.
    """

    def __init__(
        self,
        kind: str,
        relations: list[Relation],
        in_dims: dict[NodeType, int],
        *,
        hidden: int = 128,
        heads: int = 4,
        dropout_rate: float = 0.5,
        residual: bool = False,
    ) -> None:
        if kind not in ("heterosage", "heterogat"):
            raise ValueError(f"unknown link predictor kind {kind!r}")
        _check_participants(relations, in_dims)
        self.kind = kind
        self.relations = list(relations)
        self.in_dims = dict(in_dims)
        self.hidden = hidden
        self.dropout_rate = dropout_rate
        self.residual = residual
        hidden_dims = {t: hidden for t in in_dims}
        if kind == "heterosage":
            self.layer1 = SageLayer("msg1", relations, hidden_dims, hidden, activation=True)
            self.layer2 = SageLayer("msg2", relations, hidden_dims, hidden, activation=False)
        else:
            self.layer1 = GatLayer(
                "msg1", relations, hidden_dims, hidden, heads=heads, concat_heads=True, activation=True
            )
            self.layer2 = GatLayer(
                "msg2", relations, hidden_dims, hidden, heads=heads, concat_heads=False, activation=False
            )

    def init_params(self, seed: int) -> ParameterSet:
        params = ParameterSet()
        for t, d in sorted(self.in_dims.items(), key=lambda kv: kv[0].value):
            wtag, btag = f"proj/{t.value}/W", f"proj/{t.value}/b"
            params.add(wtag, init_uniform((d, self.hidden), d, seed, wtag))
            params.add(btag, init_uniform((self.hidden,), d, seed, btag))
        self.layer1.init_params(params, seed)
        self.layer2.init_params(params, seed)
        return params

    def forward(
        self,
        params: ParameterSet,
        adj: dict[str, RelationAdjacency],
        feats: dict[NodeType, np.ndarray],
        *,
        training: bool = False,
        seed: int = 0,
        epoch: int = 0,
    ) -> tuple[dict[NodeType, np.ndarray], tuple]:
        proj: dict[NodeType, np.ndarray] = {}
        proj_caches: dict[NodeType, tuple] = {}
        drop_masks: dict[str, np.ndarray | None] = {}
        for t in self.in_dims:
            y, c = linear(feats[t], params[f"proj/{t.value}/W"], params[f"proj/{t.value}/b"])
            y, m = dropout(y, self.dropout_rate, training, seed, f"drop/proj/{t.value}", epoch)
            proj[t] = y
            proj_caches[t] = c
            drop_masks[f"proj/{t.value}"] = m
        h1, c1 = self.layer1.forward(params, adj, proj)
        if self.residual:
            h1 = {t: h1[t] + proj[t] for t in h1}
        h1d: dict[NodeType, np.ndarray] = {}
        for t in h1:
            y, m = dropout(h1[t], self.dropout_rate, training, seed, f"drop/msg1/{t.value}", epoch)
            h1d[t] = y
            drop_masks[f"msg1/{t.value}"] = m
        h2, c2 = self.layer2.forward(params, adj, h1d)
        if self.residual:
            h2 = {t: h2[t] + h1d[t] for t in h2}
        cache = (feats, proj, proj_caches, drop_masks, h1d, c1, c2)
        return h2, cache

    def backward(
        self, params: ParameterSet, cache: tuple, grad_emb: dict[NodeType, np.ndarray]
    ) -> tuple[dict[str, np.ndarray], dict[NodeType, np.ndarray]]:
        feats, proj, proj_caches, drop_masks, h1d, c1, c2 = cache
        total = params.zero_grads()
        g2, gh1d = self.layer2.backward(params, c2, grad_emb, h1d)
        merge_grads(total, g2)
        if self.residual:
            for t in grad_emb:
                gh1d[t] += grad_emb[t]
        gh1 = {
            t: dropout_backward(gh1d[t], drop_masks[f"msg1/{t.value}"], self.dropout_rate)
            for t in gh1d
        }
        g1, gproj = self.layer1.backward(params, c1, gh1, proj)
        merge_grads(total, g1)
        if self.residual:
            for t in gh1:
                gproj[t] += gh1[t]
        grad_feats: dict[NodeType, np.ndarray] = {}
        for t in self.in_dims:
            gp = dropout_backward(gproj[t], drop_masks[f"proj/{t.value}"], self.dropout_rate)
            gx, gw, gb = linear_backward(gp, proj_caches[t])
            total[f"proj/{t.value}/W"] += gw
            total[f"proj/{t.value}/b"] += gb
            grad_feats[t] = gx
        return total, grad_feats
