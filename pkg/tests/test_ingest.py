import json

import numpy as np
import pytest

from maglink.hetero import build_graph
from maglink.ingest import (
    DEFAULT_URL_FILTER,
    EmbeddingFileError,
    ManifestError,
    PMGRAPH_EDGE_COUNTS,
    PMGRAPH_NODE_COUNTS,
    DatasetManifest,
    UrlFilterConfig,
    Verdict,
    load_dataset,
    load_edge_table,
    load_embeddings,
    load_manifest,
    load_node_table,
    save_manifest,
    url_lexical_filter,
    validate_dataset,
    write_edge_table,
    write_embeddings,
    write_node_table,
)
from maglink.matrix import FeatureMatrix
from maglink.rng import stream
from maglink.schema import MAKES, NodeType
from maglink.synth import SyntheticSpec, generate_dataset

M, P = NodeType.MANUFACTURER, NodeType.PRODUCT


class TestEmbeddingFile:
    def test_exact_size(self, tmp_path):
        path = tmp_path / "m.emb"
        write_embeddings(path, np.arange(6, dtype=np.float32).reshape(2, 3))
        fm = load_embeddings(path)
        assert (fm.rows, fm.cols) == (2, 3)
        assert np.array_equal(fm.values, np.arange(6).reshape(2, 3))

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "m.emb"
        write_embeddings(path, np.zeros((2, 3), dtype=np.float32))
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(EmbeddingFileError, match="truncated"):
            load_embeddings(path)

    def test_checksum_mismatch(self, tmp_path):
        path = tmp_path / "m.emb"
        write_embeddings(path, np.ones((4, 4), dtype=np.float32))
        raw = bytearray(path.read_bytes())
        raw[30] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(EmbeddingFileError, match="checksum"):
            load_embeddings(path)

    def test_zero_shape_rejected(self, tmp_path):
        import struct
        import zlib

        path = tmp_path / "m.emb"
        header = struct.pack("<4sQQ4s", b"EMB1", 0, 3, b"f32\x00")
        path.write_bytes(header + struct.pack("<I", zlib.crc32(header)))
        with pytest.raises(EmbeddingFileError, match="zero"):
            load_embeddings(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.emb"
        path.write_bytes(b"NOPE" + bytes(32))
        with pytest.raises(EmbeddingFileError, match="magic"):
            load_embeddings(path)

    def test_round_trip_bitwise(self, tmp_path):
        values = stream(0, "emb-roundtrip").standard_normal((100, 768)).astype(np.float32)
        path = tmp_path / "big.emb"
        write_embeddings(path, values)
        loaded = load_embeddings(path).values.astype(np.float32)
        assert loaded.tobytes() == values.tobytes()
        # writing what was read reproduces the file exactly
        path2 = tmp_path / "big2.emb"
        write_embeddings(path2, loaded)
        assert path.read_bytes() == path2.read_bytes()


class TestTables:
    def test_node_table_round_trip(self, tmp_path):
        path = tmp_path / "nodes.csv"
        payloads = [{"text": "a, with comma", "tags": ["x"]}, {}]
        write_node_table(path, ["n0", "n1"], payloads)
        table = load_node_table(path)
        assert table.names == ["n0", "n1"]
        assert table.payloads == payloads

    def test_node_ids_must_be_dense(self, tmp_path):
        path = tmp_path / "nodes.csv"
        path.write_text("id,name,payload\n0,a,{}\n2,b,{}\n")
        with pytest.raises(ManifestError, match="dense"):
            load_node_table(path)

    def test_edge_table_round_trip(self, tmp_path):
        path = tmp_path / "edges.csv"
        edges = np.array([(0, 1), (2, 3)])
        write_edge_table(path, edges)
        assert np.array_equal(load_edge_table(path), edges)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "edges.csv"
        path.write_text("a,b\n0,1\n")
        with pytest.raises(ManifestError, match="header"):
            load_edge_table(path)


class TestManifest:
    def test_round_trip(self, tmp_path):
        manifest = DatasetManifest(
            node_counts={M: 2, P: 3},
            edge_counts={"makes": 3},
            files={"makes_edges": "makes.csv"},
            base_dir=tmp_path,
        )
        save_manifest(tmp_path / "manifest.json", manifest)
        loaded = load_manifest(tmp_path / "manifest.json")
        assert loaded.node_counts == manifest.node_counts
        assert loaded.edge_counts == manifest.edge_counts
        assert loaded.files == manifest.files

    def test_negative_counts_rejected(self, tmp_path):
        with pytest.raises(ManifestError):
            DatasetManifest({M: -1}, {}, {}, tmp_path)

    def test_reference_census(self):
        assert PMGRAPH_NODE_COUNTS[M] == 8888
        assert PMGRAPH_NODE_COUNTS[P] == 72789
        assert PMGRAPH_NODE_COUNTS[NodeType.ATTRIBUTE] == 2918
        assert PMGRAPH_NODE_COUNTS[NodeType.IMAGE] == 29178
        assert PMGRAPH_EDGE_COUNTS == {
            "makes": 112597,
            "has_attribute": 83105,
            "has_image": 29178,
        }


class TestValidateDataset:
    def setup_method(self):
        self.g = build_graph({M: 2, P: 3}, {MAKES: [(0, 0), (0, 1), (1, 2)]})
        self.manifest = DatasetManifest(
            node_counts={M: 2, P: 3},
            edge_counts={"makes": 3},
            files={},
            base_dir=None or __import__("pathlib").Path("."),
        )

    def test_pass(self):
        feats = {M: FeatureMatrix(np.zeros((2, 4))), P: FeatureMatrix(np.zeros((3, 4)))}
        report = validate_dataset(self.manifest, self.g, feats)
        assert report.passed
        assert "PASS" in str(report)

    def test_node_count_mismatch_named(self):
        manifest = DatasetManifest({M: 3, P: 3}, {"makes": 3}, {}, self.manifest.base_dir)
        report = validate_dataset(manifest, self.g)
        assert not report.passed
        bad = report.failures
        assert len(bad) == 1 and bad[0].kind == "node-count" and bad[0].name == "manufacturer"

    def test_feature_alignment_mismatch_named(self):
        feats = {P: FeatureMatrix(np.zeros((2, 4)))}
        report = validate_dataset(self.manifest, self.g, feats)
        assert not report.passed
        assert report.failures[0].kind == "feature-rows"
        assert report.failures[0].name == "product"

    def test_synthetic_dataset_validates(self, tmp_path):
        manifest_path = generate_dataset(SyntheticSpec(seed=0), tmp_path / "ds")
        manifest = load_manifest(manifest_path)
        ds = load_dataset(manifest)
        report = validate_dataset(manifest, ds.graph, ds.clip)
        assert report.passed


class TestUrlFilter:
    def test_keep(self):
        assert url_lexical_filter("https://x.com/products/widget") is Verdict.KEEP

    def test_drop(self):
        assert url_lexical_filter("https://x.com/about") is Verdict.DROP

    def test_neutral(self):
        assert url_lexical_filter("https://x.com/home") is Verdict.NEUTRAL

    def test_case_insensitive(self):
        assert url_lexical_filter("https://x.com/PRODUCTS") is Verdict.KEEP
        assert url_lexical_filter("https://x.com/ABOUT-us") is Verdict.DROP

    def test_drop_precedence_total(self):
        gen = stream(0, "urls")
        keeps = DEFAULT_URL_FILTER.keep_keywords
        drops = DEFAULT_URL_FILTER.drop_keywords
        for i in range(100):
            k = keeps[int(gen.integers(len(keeps)))]
            d = drops[int(gen.integers(len(drops)))]
            left, right = (k, d) if gen.random() < 0.5 else (d, k)
            url = f"https://x.com/{left}/{right}?page={i}"
            assert url_lexical_filter(url) is Verdict.DROP

    def test_empty_url_rejected(self):
        with pytest.raises(ValueError):
            url_lexical_filter("")

    def test_config_invariants(self):
        with pytest.raises(ValueError, match="disjoint"):
            UrlFilterConfig(("shop",), ("Shop",))
        with pytest.raises(ValueError, match="non-empty"):
            UrlFilterConfig((), ("about",))

    def test_default_keywords(self):
        assert DEFAULT_URL_FILTER.keep_keywords == ("product", "item", "catalog", "gallery", "prod")
        assert DEFAULT_URL_FILTER.drop_keywords == ("about", "contact", "blog", "news", "login", "signup")
