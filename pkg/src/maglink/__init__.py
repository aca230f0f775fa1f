"""Cascade link prediction on multimodal attributed manufacturer-product graphs."""

__version__ = "0.1.0"

from .schema import NodeType, Relation, MAKES, HAS_ATTRIBUTE, HAS_IMAGE, reverse_relation
from .matrix import FeatureMatrix
from .hetero import (
    HeteroGraph,
    EdgeSplit,
    build_graph,
    add_reverse_edges,
    split_edges,
    sample_negatives,
    strip_relations,
    sample_image_edges,
)
from .metrics import MetricReport, roc_auc, pr_auc, brute_force_roc_auc

__all__ = [
    "__version__",
    "NodeType",
    "Relation",
    "MAKES",
    "HAS_ATTRIBUTE",
    "HAS_IMAGE",
    "reverse_relation",
    "FeatureMatrix",
    "HeteroGraph",
    "EdgeSplit",
    "build_graph",
    "add_reverse_edges",
    "split_edges",
    "sample_negatives",
    "strip_relations",
    "sample_image_edges",
    "MetricReport",
    "roc_auc",
    "pr_auc",
    "brute_force_roc_auc",
]
