"""Dataset loading and integrity checks.

File formats:
  * node tables: UTF-8 CSV, header ``id,name,payload``; payload is a JSON
    object (may be empty) with optional keys ``text``, ``tags``, ``numeric``
  * edge tables: UTF-8 CSV, header ``src,dst``
  * embedding matrices: binary, magic ``EMB1`` | rows u64 | cols u64 |
    dtype tag ``f32\\0`` | row-major little-endian float32 payload | crc32
  * manifest: JSON with keys ``nodes.<type>``, ``edges.<relation>``,
    ``files.<name>``
"""

from __future__ import annotations

import csv
import json
import struct
import zlib
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping

import numpy as np

from .hetero import HeteroGraph, build_graph
from .matrix import FeatureMatrix
from .schema import HAS_ATTRIBUTE, HAS_IMAGE, MAKES, NodeType, Relation

__all__ = [
    "EmbeddingFileError",
    "ManifestError",
    "load_embeddings",
    "write_embeddings",
    "load_node_table",
    "write_node_table",
    "load_edge_table",
    "write_edge_table",
    "DatasetManifest",
    "load_manifest",
    "Dataset",
    "load_dataset",
    "ValidationEntry",
    "ValidationReport",
    "validate_dataset",
    "Verdict",
    "UrlFilterConfig",
    "DEFAULT_URL_FILTER",
    "url_lexical_filter",
    "PMGRAPH_NODE_COUNTS",
    "PMGRAPH_EDGE_COUNTS",
    "FILTERED_IMAGE_POOL",
]

# Reference census of the full production graph, used as manifest defaults
# and in validation examples.
PMGRAPH_NODE_COUNTS: dict[NodeType, int] = {
    NodeType.MANUFACTURER: 8_888,
    NodeType.PRODUCT: 72_789,
    NodeType.ATTRIBUTE: 2_918,
    NodeType.IMAGE: 29_178,
}
PMGRAPH_EDGE_COUNTS: dict[str, int] = {
    "makes": 112_597,
    "has_attribute": 83_105,
    "has_image": 29_178,
}
# Size of the post-filter image pool the 20% sample in the census was drawn from.
FILTERED_IMAGE_POOL = 145_888


# ---------------------------------------------------------------------------
# embedding matrices
# ---------------------------------------------------------------------------

_MAGIC = b"EMB1"
_DTYPE_TAG = b"f32\x00"
_HEADER = struct.Struct("<4sQQ4s")


class EmbeddingFileError(ValueError):
    pass


def write_embeddings(path: str | Path, values: np.ndarray) -> None:
    """Serialize a matrix as float32 rows with a trailing crc32."""
    arr = np.ascontiguousarray(np.asarray(values), dtype="<f4")
    if arr.ndim != 2:
        raise EmbeddingFileError(f"expected a 2-D matrix, got shape {arr.shape}")
    header = _HEADER.pack(_MAGIC, arr.shape[0], arr.shape[1], _DTYPE_TAG)
    payload = arr.tobytes(order="C")
    crc = zlib.crc32(payload, zlib.crc32(header))
    Path(path).write_bytes(header + payload + struct.pack("<I", crc))


def load_embeddings(path: str | Path) -> FeatureMatrix:
    """Read an embedding matrix, verifying shape and checksum."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size + 4:
        raise EmbeddingFileError(f"{path}: file too short for a header")
    magic, rows, cols, dtype_tag = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise EmbeddingFileError(f"{path}: bad magic {magic!r}")
    if dtype_tag != _DTYPE_TAG:
        raise EmbeddingFileError(f"{path}: unsupported dtype tag {dtype_tag!r}")
    if rows == 0 or cols == 0:
        raise EmbeddingFileError(f"{path}: zero-sized shape ({rows}, {cols})")
    expected = _HEADER.size + rows * cols * 4 + 4
    if len(raw) != expected:
        raise EmbeddingFileError(
            f"{path}: truncated payload, have {len(raw)} bytes, expected {expected}"
        )
    (crc_stored,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(raw[:-4]) != crc_stored:
        raise EmbeddingFileError(f"{path}: checksum mismatch")
    values = np.frombuffer(raw, dtype="<f4", count=rows * cols, offset=_HEADER.size)
    return FeatureMatrix(values.reshape(rows, cols).astype(np.float64))


# ---------------------------------------------------------------------------
# node / edge tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NodeTable:
    names: list[str]
    payloads: list[dict]

    @property
    def count(self) -> int:
        return len(self.names)


def write_node_table(path: str | Path, names: list[str], payloads: list[dict] | None = None) -> None:
    payloads = payloads if payloads is not None else [{} for _ in names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "name", "payload"])
        for i, (name, payload) in enumerate(zip(names, payloads)):
            writer.writerow([i, name, json.dumps(payload, sort_keys=True)])


def load_node_table(path: str | Path) -> NodeTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id", "name", "payload"]:
            raise ManifestError(f"{path}: expected header id,name,payload, got {header}")
        rows = [(int(r[0]), r[1], r[2]) for r in reader]
    rows.sort(key=lambda r: r[0])
    if [r[0] for r in rows] != list(range(len(rows))):
        raise ManifestError(f"{path}: node ids must be dense 0..{len(rows) - 1}")
    payloads = [json.loads(p) if p.strip() else {} for _, _, p in rows]
    return NodeTable([r[1] for r in rows], payloads)


def write_edge_table(path: str | Path, edges: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "dst"])
        for s, d in np.asarray(edges, dtype=np.int64):
            writer.writerow([int(s), int(d)])


def load_edge_table(path: str | Path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["src", "dst"]:
            raise ManifestError(f"{path}: expected header src,dst, got {header}")
        rows = [(int(r[0]), int(r[1])) for r in reader]
    return np.asarray(rows, dtype=np.int64).reshape(len(rows), 2)


# ---------------------------------------------------------------------------
# manifest and dataset
# ---------------------------------------------------------------------------


class ManifestError(ValueError):
    pass


_NODE_TABLE_KEYS = {
    NodeType.MANUFACTURER: "manufacturer_nodes",
    NodeType.PRODUCT: "product_nodes",
    NodeType.ATTRIBUTE: "attribute_nodes",
    NodeType.IMAGE: "image_nodes",
}
_EDGE_TABLE_KEYS = {MAKES: "makes_edges", HAS_ATTRIBUTE: "has_attribute_edges", HAS_IMAGE: "has_image_edges"}
_EMBEDDING_KEYS = {
    NodeType.MANUFACTURER: "manufacturer_text_emb",
    NodeType.PRODUCT: "product_text_emb",
    NodeType.ATTRIBUTE: "attribute_text_emb",
    NodeType.IMAGE: "image_emb",
}


@dataclass(frozen=True)
class DatasetManifest:
    node_counts: dict[NodeType, int]
    edge_counts: dict[str, int]
    files: dict[str, str]
    base_dir: Path

    def __post_init__(self) -> None:
        if any(c < 0 for c in self.node_counts.values()) or any(
            c < 0 for c in self.edge_counts.values()
        ):
            raise ManifestError("manifest counts must be nonnegative")

    def path(self, key: str) -> Path:
        if key not in self.files:
            raise ManifestError(f"manifest has no file entry {key!r}")
        return self.base_dir / self.files[key]


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    try:
        nodes = {NodeType(k): int(v) for k, v in doc["nodes"].items()}
        edges = {str(k): int(v) for k, v in doc["edges"].items()}
        files = {str(k): str(v) for k, v in doc["files"].items()}
    except (KeyError, ValueError) as exc:
        raise ManifestError(f"{path}: malformed manifest ({exc})") from exc
    return DatasetManifest(nodes, edges, files, path.parent)


def save_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    doc = {
        "nodes": {str(t): c for t, c in manifest.node_counts.items()},
        "edges": dict(manifest.edge_counts),
        "files": dict(manifest.files),
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@dataclass
class Dataset:
    """Loaded tables, text, categorical tags, numerics, and CLIP matrices."""

    graph: HeteroGraph
    clip: dict[NodeType, FeatureMatrix]
    docs: dict[NodeType, list[str]]
    tags: dict[NodeType, list[list[str]]]
    numeric: dict[NodeType, dict[str, np.ndarray]]
    manifest: DatasetManifest

    def node_count(self, node_type: NodeType) -> int:
        return self.graph.num_nodes(node_type)


def _payload_columns(table: NodeTable) -> tuple[list[str], list[list[str]], dict[str, np.ndarray]]:
    docs = [str(p.get("text", "")) for p in table.payloads]
    tags = [[str(t) for t in p.get("tags", [])] for p in table.payloads]
    numeric_keys = sorted({k for p in table.payloads for k in p.get("numeric", {})})
    numeric = {
        key: np.array(
            [float(p.get("numeric", {}).get(key, np.nan)) for p in table.payloads],
            dtype=np.float64,
        )
        for key in numeric_keys
    }
    return docs, tags, numeric


def load_dataset(manifest: DatasetManifest) -> Dataset:
    """Load all tables and matrices named by the manifest and build the graph."""
    tables: dict[NodeType, NodeTable] = {}
    for ntype, key in _NODE_TABLE_KEYS.items():
        if key in manifest.files:
            tables[ntype] = load_node_table(manifest.path(key))
    counts = {ntype: t.count for ntype, t in tables.items()}
    edges: dict[Relation, np.ndarray] = {}
    for rel, key in _EDGE_TABLE_KEYS.items():
        if key in manifest.files:
            edges[rel] = load_edge_table(manifest.path(key))
    graph = build_graph(counts, edges)

    clip: dict[NodeType, FeatureMatrix] = {}
    for ntype, key in _EMBEDDING_KEYS.items():
        if key in manifest.files:
            clip[ntype] = load_embeddings(manifest.path(key)).bind(ntype)

    docs: dict[NodeType, list[str]] = {}
    tags: dict[NodeType, list[list[str]]] = {}
    numeric: dict[NodeType, dict[str, np.ndarray]] = {}
    for ntype, table in tables.items():
        docs[ntype], tags[ntype], numeric[ntype] = _payload_columns(table)
    return Dataset(graph, clip, docs, tags, numeric, manifest)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValidationEntry:
    kind: str  # "node-count" | "edge-count" | "feature-rows" | "integrity"
    name: str
    expected: int
    actual: int

    @property
    def ok(self) -> bool:
        return self.expected == self.actual

    def __str__(self) -> str:
        mark = "ok" if self.ok else "FAIL"
        return f"[{mark}] {self.kind} {self.name}: expected {self.expected}, actual {self.actual}"


@dataclass(frozen=True)
class ValidationReport:
    entries: tuple[ValidationEntry, ...]

    @property
    def passed(self) -> bool:
        return all(e.ok for e in self.entries)

    @property
    def failures(self) -> list[ValidationEntry]:
        return [e for e in self.entries if not e.ok]

    def __str__(self) -> str:
        lines = [str(e) for e in self.entries]
        lines.append("PASS" if self.passed else f"FAIL ({len(self.failures)} finding(s))")
        return "\n".join(lines)


def validate_dataset(
    manifest: DatasetManifest,
    g: HeteroGraph,
    features: Mapping[NodeType, FeatureMatrix] | None = None,
) -> ValidationReport:
    """Compare expected counts against the loaded graph and feature matrices.

    All findings are collected into the report; nothing raises.
    """
    entries: list[ValidationEntry] = []
    for ntype, expected in manifest.node_counts.items():
        entries.append(ValidationEntry("node-count", str(ntype), expected, g.num_nodes(ntype)))
    for rel_name, expected in manifest.edge_counts.items():
        actual = g.num_edges(rel_name) if g.has_relation(rel_name) else 0
        entries.append(ValidationEntry("edge-count", rel_name, expected, actual))
    for ntype, fm in (features or {}).items():
        entries.append(ValidationEntry("feature-rows", str(ntype), g.num_nodes(ntype), fm.rows))
    for rel in g.relations:
        edges = g.edge_array(rel.name)
        in_range = int(
            np.sum(
                (edges[:, 0] >= 0)
                & (edges[:, 0] < g.num_nodes(rel.src))
                & (edges[:, 1] >= 0)
                & (edges[:, 1] < g.num_nodes(rel.dst))
            )
        )
        entries.append(ValidationEntry("integrity", rel.name, edges.shape[0], in_range))
    return ValidationReport(tuple(entries))


# ---------------------------------------------------------------------------
# lexical URL filter
# ---------------------------------------------------------------------------


class Verdict(str, Enum):
    KEEP = "keep"
    DROP = "drop"
    NEUTRAL = "neutral"


@dataclass(frozen=True)
class UrlFilterConfig:
    """Substring keyword lists; drop wins over keep on conflict.

    ``fallback_page_budget`` is the number of extra internal pages a crawler
    may explore when too few links are kept. It is carried as configuration
    only; no crawling happens here.
    """

    keep_keywords: tuple[str, ...]
    drop_keywords: tuple[str, ...]
    fallback_page_budget: int | None = None

    def __post_init__(self) -> None:
        keep = tuple(k.lower() for k in self.keep_keywords)
        drop = tuple(k.lower() for k in self.drop_keywords)
        if not keep or not drop:
            raise ValueError("keyword lists must be non-empty")
        if set(keep) & set(drop):
            raise ValueError("keep and drop keyword lists must be disjoint")
        object.__setattr__(self, "keep_keywords", keep)
        object.__setattr__(self, "drop_keywords", drop)


DEFAULT_URL_FILTER = UrlFilterConfig(
    keep_keywords=("product", "item", "catalog", "gallery", "prod"),
    drop_keywords=("about", "contact", "blog", "news", "login", "signup"),
)


def url_lexical_filter(url: str, cfg: UrlFilterConfig = DEFAULT_URL_FILTER) -> Verdict:
    """Case-insensitive substring verdict for one URL."""
    if not url:
        raise ValueError("url must be non-empty")
    low = url.lower()
    if any(k in low for k in cfg.drop_keywords):
        return Verdict.DROP
    if any(k in low for k in cfg.keep_keywords):
        return Verdict.KEEP
    return Verdict.NEUTRAL
