"""Planted-cluster synthetic dataset generator.

Manufacturers and products are assigned to hidden clusters; manufacturer-
product edges connect within clusters only. Attribute edges link each
manufacturer to attributes owned by its cluster, so cluster identity can be
made to travel exclusively through graph structure: with
``feature_signal=0`` every node feature is pure noise and only the
attribute topology carries the planted signal.

The generator writes the full set of manifest files (node/edge tables,
embedding matrices, manifest JSON), so generated datasets flow through the
same ingestion path as real ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import (
    DatasetManifest,
    save_manifest,
    write_edge_table,
    write_embeddings,
    write_node_table,
)
from .rng import stream
from .schema import NodeType

__all__ = ["SyntheticSpec", "generate_dataset"]

_WORDS = (
    "alloy casting forging milling turning welding anodizing coating stamping "
    "molding extrusion machining grinding plating brazing laser waterjet sheet "
    "tube gear bearing valve pump sensor housing bracket fastener spring shaft "
    "flange gasket rotor stator panel frame rail clamp fitting nozzle manifold"
).split()


@dataclass(frozen=True)
class SyntheticSpec:
    n_manufacturers: int = 80
    n_products: int = 160
    n_clusters: int = 8
    n_attributes: int = 40
    attrs_per_manufacturer: int = 4
    makes_per_manufacturer: int = 4
    images_per_manufacturer: int = 2
    feature_dim: int = 768
    # 0.0 hides cluster identity from every feature matrix; larger values mix
    # the cluster centroid into node features with that weight
    feature_signal: float = 0.0
    # attribute edges follow clusters when True, otherwise uniform noise
    attribute_signal: bool = True
    # weight of the cluster centroid in image embeddings
    image_signal: float = 0.0
    tag_vocab: int = 40
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_clusters < 2:
            raise ValueError("need at least two clusters")
        if self.n_manufacturers % self.n_clusters or self.n_products % self.n_clusters:
            raise ValueError("manufacturer and product counts must divide evenly into clusters")
        if self.n_attributes % self.n_clusters:
            raise ValueError("attribute count must divide evenly into clusters")
        if self.attrs_per_manufacturer > self.n_attributes // self.n_clusters:
            raise ValueError("attrs_per_manufacturer exceeds the per-cluster attribute pool")
        if self.makes_per_manufacturer > self.n_products // self.n_clusters:
            raise ValueError("makes_per_manufacturer exceeds the per-cluster product pool")


def _random_doc(gen: np.random.Generator, n_words: int = 8) -> str:
    return " ".join(gen.choice(_WORDS, size=n_words))


def generate_dataset(spec: SyntheticSpec, out_dir: str | Path) -> Path:
    """Write the dataset under ``out_dir`` and return the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    k = spec.n_clusters
    man_cluster = np.arange(spec.n_manufacturers) % k
    prod_cluster = np.arange(spec.n_products) % k
    attr_cluster = np.arange(spec.n_attributes) % k
    n_images = spec.n_manufacturers * spec.images_per_manufacturer

    makes = []
    has_attr = []
    has_image = []
    img_id = 0
    img_owner = np.zeros(n_images, dtype=np.int64)
    for i in range(spec.n_manufacturers):
        gen = stream(spec.seed, "edges", i)
        prods = np.flatnonzero(prod_cluster == man_cluster[i])
        for p in gen.choice(prods, size=spec.makes_per_manufacturer, replace=False):
            makes.append((i, int(p)))
        pool = (
            np.flatnonzero(attr_cluster == man_cluster[i])
            if spec.attribute_signal
            else np.arange(spec.n_attributes)
        )
        for a in gen.choice(pool, size=spec.attrs_per_manufacturer, replace=False):
            has_attr.append((i, int(a)))
        for _ in range(spec.images_per_manufacturer):
            has_image.append((i, img_id))
            img_owner[img_id] = i
            img_id += 1

    centroids = stream(spec.seed, "centroids").standard_normal((k, spec.feature_dim))

    def embeddings(tag: str, clusters: np.ndarray, signal: float) -> np.ndarray:
        gen = stream(spec.seed, f"emb/{tag}")
        base = gen.standard_normal((clusters.shape[0], spec.feature_dim))
        if signal > 0:
            base = base + signal * centroids[clusters]
        return base

    man_emb = embeddings("manufacturer", man_cluster, spec.feature_signal)
    prod_emb = embeddings("product", prod_cluster, spec.feature_signal)
    attr_emb = embeddings("attribute", attr_cluster, spec.feature_signal)
    img_emb = embeddings("image", man_cluster[img_owner], spec.image_signal)

    def payload(gen: np.random.Generator, with_numeric: bool) -> dict:
        doc = _random_doc(gen)
        tags = [f"tag{int(t)}" for t in gen.choice(spec.tag_vocab, size=3, replace=False)]
        p: dict = {"text": doc, "tags": tags}
        if with_numeric:
            p["numeric"] = {
                "employees": float(np.round(gen.lognormal(4.0, 1.0))),
                "lat": float(np.round(gen.uniform(25, 49), 4)),
                "lon": float(np.round(gen.uniform(-124, -67), 4)),
            }
            if gen.random() < 0.1:
                del p["numeric"]["employees"]  # some listings omit headcount
        return p

    man_payloads = [payload(stream(spec.seed, "man-payload", i), True) for i in range(spec.n_manufacturers)]
    prod_payloads = [payload(stream(spec.seed, "prod-payload", j), False) for j in range(spec.n_products)]

    write_node_table(out / "manufacturers.csv", [f"mfr-{i:04d}" for i in range(spec.n_manufacturers)], man_payloads)
    write_node_table(out / "products.csv", [f"prod-{j:05d}" for j in range(spec.n_products)], prod_payloads)
    write_node_table(
        out / "attributes.csv",
        [f"attr-{a:03d}" for a in range(spec.n_attributes)],
        [{"text": f"capability {a}"} for a in range(spec.n_attributes)],
    )
    write_node_table(out / "images.csv", [f"img-{i:05d}.jpg" for i in range(n_images)])
    write_edge_table(out / "makes.csv", np.array(makes))
    write_edge_table(out / "has_attribute.csv", np.array(has_attr))
    write_edge_table(out / "has_image.csv", np.array(has_image))
    write_embeddings(out / "manufacturer_text.emb", man_emb)
    write_embeddings(out / "product_text.emb", prod_emb)
    write_embeddings(out / "attribute_text.emb", attr_emb)
    write_embeddings(out / "image.emb", img_emb)

    manifest = DatasetManifest(
        node_counts={
            NodeType.MANUFACTURER: spec.n_manufacturers,
            NodeType.PRODUCT: spec.n_products,
            NodeType.ATTRIBUTE: spec.n_attributes,
            NodeType.IMAGE: n_images,
        },
        edge_counts={
            "makes": len(makes),
            "has_attribute": len(has_attr),
            "has_image": len(has_image),
        },
        files={
            "manufacturer_nodes": "manufacturers.csv",
            "product_nodes": "products.csv",
            "attribute_nodes": "attributes.csv",
            "image_nodes": "images.csv",
            "makes_edges": "makes.csv",
            "has_attribute_edges": "has_attribute.csv",
            "has_image_edges": "has_image.csv",
            "manufacturer_text_emb": "manufacturer_text.emb",
            "product_text_emb": "product_text.emb",
            "attribute_text_emb": "attribute_text.emb",
            "image_emb": "image.emb",
        },
        base_dir=out,
    )
    manifest_path = out / "manifest.json"
    save_manifest(manifest_path, manifest)
    return manifest_path
