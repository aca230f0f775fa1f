"""The six graph variants and their assembly into training-ready inputs.

Flat bipartite variants score manufacturer-product links over the bipartite
graph with 64-D assembled features. Flat non-bipartite variants keep the
attribute (and image) relations in the message graph while the loss and
evaluation stay on the target relation. Cascade variants first pretrain
manufacturer embeddings on the attribute(/image) graph and fuse them into
the manufacturer features before the bipartite stage.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .features import (
    FUSED_DIM,
    STAGE2_DIM,
    assemble_product,
    assemble_stage2_manufacturer,
    fuse_final_manufacturer,
    one_hot,
    standardize,
    svd_fit,
    svd_transform,
    tfidf_fit_transform,
)
from .hetero import (
    EdgeSplit,
    HeteroGraph,
    add_reverse_edges,
    sample_image_edges,
    split_edges,
    strip_relations,
)
from .ingest import Dataset
from .matrix import FeatureMatrix
from .schema import HAS_ATTRIBUTE, HAS_IMAGE, MAKES, NodeType
from .train import PretrainConfig, PretrainResult, pretrain_stage1

__all__ = ["VariantSpec", "VARIANTS", "BuiltVariant", "build_variant"]


@dataclass(frozen=True)
class VariantSpec:
    name: str
    hierarchy: str  # "flat" | "cascade"
    text_embedding: str  # "tfidf" | "clip"
    images: bool
    bipartite: bool


VARIANTS: dict[str, VariantSpec] = {
    "ag_tfidf": VariantSpec("ag_tfidf", "flat", "tfidf", False, True),
    "ag_jina": VariantSpec("ag_jina", "flat", "clip", False, True),
    "fag1": VariantSpec("fag1", "flat", "clip", False, False),
    "fmag2": VariantSpec("fmag2", "flat", "clip", True, False),
    "cmag1": VariantSpec("cmag1", "cascade", "clip", False, True),
    "cmag2": VariantSpec("cmag2", "cascade", "clip", True, True),
}


@dataclass
class BuiltVariant:
    variant: VariantSpec
    graph: HeteroGraph
    features: dict[NodeType, FeatureMatrix]
    split: EdgeSplit
    pretrain: PretrainResult | None


class MissingModalityError(ValueError):
    pass


def _clip(dataset: Dataset, node_type: NodeType) -> FeatureMatrix:
    if node_type not in dataset.clip:
        raise MissingModalityError(f"dataset has no embedding matrix for {node_type}")
    return dataset.clip[node_type]


def _text_features(
    dataset: Dataset, spec: VariantSpec, node_type: NodeType, max_features: int
) -> FeatureMatrix:
    if spec.text_embedding == "clip":
        return _clip(dataset, node_type)
    docs = dataset.docs.get(node_type)
    if not docs or not any(docs):
        raise MissingModalityError(f"dataset has no text for {node_type} (tf-idf path)")
    _, mat = tfidf_fit_transform(docs, max_features)
    return mat.bind(node_type)


def _categorical(dataset: Dataset, node_type: NodeType) -> FeatureMatrix:
    tags = dataset.tags.get(node_type) or []
    categories = sorted({t for row in tags for t in row})
    if not categories:
        # no categorical metadata: a single zero column keeps shapes valid
        return FeatureMatrix(np.zeros((dataset.node_count(node_type), 1)), node_type)
    return one_hot(tags, categories).bind(node_type)


def _numeric(dataset: Dataset, node_type: NodeType) -> FeatureMatrix:
    cols = dataset.numeric.get(node_type) or {}
    if not cols:
        return FeatureMatrix(np.zeros((dataset.node_count(node_type), 1)), node_type)
    stacked = np.column_stack([cols[k] for k in sorted(cols)])
    return FeatureMatrix(standardize(stacked), node_type)


def _compress64(fm: FeatureMatrix, seed: int) -> FeatureMatrix:
    model = svd_fit(fm, min(STAGE2_DIM, min(fm.rows, fm.cols)), seed=seed)
    return svd_transform(model, fm)


def build_variant(
    spec: VariantSpec | str,
    dataset: Dataset,
    seed: int = 0,
    *,
    image_ratio: float = 1.0,
    pretrain_cfg: PretrainConfig | None = None,
    tfidf_max_features: int = 4096,
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    neg_ratio: int = 1,
) -> BuiltVariant:
    """Assemble one variant: features, final graph with reverse edges, and
    the target-relation split with fixed negatives."""
    if isinstance(spec, str):
        if spec not in VARIANTS:
            raise ValueError(f"unknown variant {spec!r}; expected one of {sorted(VARIANTS)}")
        spec = VARIANTS[spec]

    base = dataset.graph
    image_feats: FeatureMatrix | None = None
    if spec.images:
        if not base.has_relation(HAS_IMAGE.name):
            raise MissingModalityError("variant needs image edges but the dataset has none")
        base = base.with_features({NodeType.IMAGE: _clip(dataset, NodeType.IMAGE)})
        base = sample_image_edges(base, image_ratio, seed)
        image_feats = base.features[NodeType.IMAGE]

    man_text = _text_features(dataset, spec, NodeType.MANUFACTURER, tfidf_max_features)
    prod_text = _text_features(dataset, spec, NodeType.PRODUCT, tfidf_max_features)
    stage2_man = assemble_stage2_manufacturer(
        man_text, _categorical(dataset, NodeType.MANUFACTURER), _numeric(dataset, NodeType.MANUFACTURER), seed
    )
    prod_feats = assemble_product(prod_text, _categorical(dataset, NodeType.PRODUCT), seed)

    pretrain_result: PretrainResult | None = None
    if spec.hierarchy == "cascade":
        keep = [HAS_ATTRIBUTE.name] + ([HAS_IMAGE.name] if spec.images else [])
        mag = strip_relations(base, keep)
        mag_feats = {
            NodeType.MANUFACTURER: _clip(dataset, NodeType.MANUFACTURER),
            NodeType.ATTRIBUTE: _clip(dataset, NodeType.ATTRIBUTE),
        }
        if spec.images:
            mag_feats[NodeType.IMAGE] = image_feats
        cfg = pretrain_cfg if pretrain_cfg is not None else PretrainConfig()
        pretrain_result = pretrain_stage1(mag, mag_feats, replace(cfg, seed=seed))
        man_final = fuse_final_manufacturer(pretrain_result.embeddings, stage2_man, seed)
    else:
        man_final = stage2_man

    if spec.bipartite:
        keep_final = [MAKES.name]
    else:
        keep_final = [MAKES.name, HAS_ATTRIBUTE.name] + ([HAS_IMAGE.name] if spec.images else [])
    final = strip_relations(base, keep_final)
    for name in keep_final:
        final = add_reverse_edges(final, name)

    features: dict[NodeType, FeatureMatrix] = {
        NodeType.MANUFACTURER: man_final.bind(NodeType.MANUFACTURER),
        NodeType.PRODUCT: prod_feats.bind(NodeType.PRODUCT),
    }
    if not spec.bipartite:
        features[NodeType.ATTRIBUTE] = _compress64(_clip(dataset, NodeType.ATTRIBUTE), seed)
        if spec.images:
            features[NodeType.IMAGE] = _compress64(image_feats, seed)

    split = split_edges(final, MAKES, split_ratios, seed, neg_ratio)
    return BuiltVariant(spec, final, features, split, pretrain_result)
