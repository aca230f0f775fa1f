"""Feature engineering: TF-IDF, one-hot, standardization, truncated SVD,
and the two-stage assembly producing the final 64-D node features.

The default SVD path computes the exact decomposition and truncates, which
keeps the captured-energy guarantee tight; a sketch-based randomized path
(Gaussian sketch, oversampling 10, four orthonormalized power iterations)
is available for very large matrices where a small energy shortfall is
acceptable. No column centering is applied, and basis signs are
canonicalized so fitted models do not depend on row order.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .container import read_container, write_container
from .matrix import FeatureMatrix
from .rng import stream

__all__ = [
    "TfidfModel",
    "tokenize",
    "tfidf_fit_transform",
    "one_hot",
    "standardize",
    "SvdModel",
    "svd_fit",
    "svd_transform",
    "assemble_stage2_manufacturer",
    "fuse_final_manufacturer",
    "assemble_product",
    "STAGE1_DIM",
    "STAGE2_DIM",
    "FUSED_DIM",
]

STAGE1_DIM = 32
STAGE2_DIM = 64
FUSED_DIM = 64

_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(doc: str) -> list[str]:
    """Lowercase, split on non-alphanumeric runs, drop tokens shorter than 2."""
    return [t for t in _TOKEN.findall(doc.lower()) if len(t) >= 2]


@dataclass(frozen=True)
class TfidfModel:
    """Fitted vocabulary with smoothed document frequencies."""

    vocabulary: dict[str, int]  # term -> dense column 0..V-1
    doc_freq: np.ndarray  # per-column document frequency, >= 1
    corpus_size: int

    def __post_init__(self) -> None:
        cols = sorted(self.vocabulary.values())
        if cols != list(range(len(self.vocabulary))):
            raise ValueError("vocabulary columns must be dense 0..V-1")
        if np.any(self.doc_freq < 1):
            raise ValueError("document frequencies must be >= 1")

    def idf(self) -> np.ndarray:
        return np.log((1.0 + self.corpus_size) / (1.0 + self.doc_freq)) + 1.0

    def transform(self, docs: list[str]) -> FeatureMatrix:
        idf = self.idf()
        out = np.zeros((len(docs), len(self.vocabulary)), dtype=np.float64)
        for i, doc in enumerate(docs):
            for tok in tokenize(doc):
                col = self.vocabulary.get(tok)
                if col is not None:
                    out[i, col] += 1.0
        out *= idf
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        np.divide(out, norms, out=out, where=norms > 0)
        return FeatureMatrix(out)

    def save(self, path: str | Path) -> None:
        terms = sorted(self.vocabulary, key=self.vocabulary.get)
        write_container(
            path,
            "tfidf",
            1,
            {"terms": terms, "corpus_size": self.corpus_size},
            {"doc_freq": self.doc_freq.astype(np.int64)},
        )

    @classmethod
    def load(cls, path: str | Path) -> "TfidfModel":
        meta, arrays = read_container(path, "tfidf", 1)
        vocab = {t: i for i, t in enumerate(meta["terms"])}
        return cls(vocab, arrays["doc_freq"], int(meta["corpus_size"]))


def tfidf_fit_transform(
    docs: list[str], max_features: int | None = None
) -> tuple[TfidfModel, FeatureMatrix]:
    """Fit tf-idf weights tf * (ln((1+N)/(1+df)) + 1) with L2-normalized rows.

    The vocabulary keeps the ``max_features`` most frequent terms by total
    corpus count, ties broken lexicographically; columns are assigned in
    lexicographic term order.
    """
    tokenized = [tokenize(d) for d in docs]
    if not any(tokenized):
        raise ValueError("corpus has no non-empty documents after tokenization")
    corpus_freq: dict[str, int] = {}
    doc_freq: dict[str, int] = {}
    for toks in tokenized:
        for tok in toks:
            corpus_freq[tok] = corpus_freq.get(tok, 0) + 1
        for tok in set(toks):
            doc_freq[tok] = doc_freq.get(tok, 0) + 1
    terms = sorted(corpus_freq)
    if max_features is not None and max_features < len(terms):
        terms = sorted(sorted(corpus_freq), key=lambda t: (-corpus_freq[t], t))[:max_features]
        terms.sort()
    vocab = {t: i for i, t in enumerate(terms)}
    model = TfidfModel(
        vocab,
        np.array([doc_freq[t] for t in terms], dtype=np.int64),
        len(docs),
    )
    return model, model.transform(docs)


def one_hot(
    values: list, categories: list[str], *, strict: bool = False
) -> FeatureMatrix:
    """Encode a categorical column; multi-valued entries become multi-hot.

    ``values`` entries may be a string, an iterable of strings, or None for
    missing (an all-zero row). Unknown categories raise in strict mode and
    are ignored otherwise.
    """
    index = {c: j for j, c in enumerate(categories)}
    if len(index) != len(categories):
        raise ValueError("categories must be unique")
    out = np.zeros((len(values), len(categories)), dtype=np.float64)
    for i, entry in enumerate(values):
        if entry is None:
            continue
        items = [entry] if isinstance(entry, str) else list(entry)
        for item in items:
            j = index.get(item)
            if j is None:
                if strict:
                    raise ValueError(f"row {i}: unknown category {item!r}")
                continue
            out[i, j] = 1.0
    return FeatureMatrix(out)


def standardize(values: np.ndarray) -> np.ndarray:
    """Column-wise (x - mean) / std with population std.

    Moments are taken over the observed entries; missing entries (NaN) are
    imputed with the column mean and so land at exactly 0. Zero-variance
    columns map to all zeros.
    """
    arr = np.array(values, dtype=np.float64)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[:, None]
    for j in range(arr.shape[1]):
        col = arr[:, j]
        finite = np.isfinite(col)
        if not finite.any():
            arr[:, j] = 0.0
            continue
        mean = col[finite].mean()
        std = col[finite].std()
        col[~finite] = mean
        arr[:, j] = (col - mean) / std if std > 0 else 0.0
    return arr[:, 0] if squeeze else arr


@dataclass(frozen=True)
class SvdModel:
    """Rank-k right singular basis with singular values and column means."""

    k: int
    basis: np.ndarray  # (cols, k), orthonormal columns
    singular_values: np.ndarray  # (k,), descending, nonnegative
    col_means: np.ndarray  # (cols,), zeros unless fitted with centering

    def __post_init__(self) -> None:
        gram = self.basis.T @ self.basis
        if np.max(np.abs(gram - np.eye(self.k))) > 1e-8:
            raise ValueError("SVD basis columns are not orthonormal")
        s = self.singular_values
        if np.any(s < -1e-12) or np.any(np.diff(s) > 1e-12):
            raise ValueError("singular values must be nonnegative and descending")

    def save(self, path: str | Path) -> None:
        write_container(
            path,
            "svd",
            1,
            {"k": self.k},
            {
                "basis": self.basis,
                "singular_values": self.singular_values,
                "col_means": self.col_means,
            },
        )

    @classmethod
    def load(cls, path: str | Path) -> "SvdModel":
        meta, arrays = read_container(path, "svd", 1)
        return cls(int(meta["k"]), arrays["basis"], arrays["singular_values"], arrays["col_means"])


def _clip_rank(k: int, rows: int, cols: int) -> int:
    limit = min(rows, cols)
    if k > limit:
        warnings.warn(f"requested rank {k} exceeds min(rows, cols)={limit}; clipping", stacklevel=3)
        return limit
    return k


def svd_fit(
    m: FeatureMatrix | np.ndarray,
    k: int,
    seed: int = 0,
    *,
    method: str = "exact",
    oversample: int = 10,
    power_iters: int = 4,
    center: bool = False,
) -> SvdModel:
    """Truncated SVD of a dense matrix.

    ``method="exact"`` (default) computes the full decomposition and keeps
    the top k components, so the captured Frobenius energy matches the
    optimum to rounding error. ``method="randomized"`` uses a seeded
    Gaussian sketch with orthonormalized power iterations; it is faster on
    very wide matrices but can fall measurably short of the top-k energy on
    slowly decaying spectra. Basis signs are canonicalized (largest-
    magnitude entry positive) so the fit does not depend on row order.
    """
    x = m.values if isinstance(m, FeatureMatrix) else np.asarray(m, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot fit SVD on non-finite input")
    if k < 1:
        raise ValueError(f"rank must be >= 1, got {k}")
    if method not in ("exact", "randomized"):
        raise ValueError(f"unknown SVD method {method!r}")
    n, d = x.shape
    k = _clip_rank(k, n, d)
    means = x.mean(axis=0) if center else np.zeros(d)
    if center:
        x = x - means

    if method == "exact":
        _, s, vt = np.linalg.svd(x, full_matrices=False)
    else:
        width = min(k + oversample, d)
        omega = stream(seed, "svd-sketch").standard_normal((d, width))
        q, _ = np.linalg.qr(x @ omega)
        for _ in range(power_iters):
            q, _ = np.linalg.qr(x.T @ q)
            q, _ = np.linalg.qr(x @ q)
        b = q.T @ x
        _, s, vt = np.linalg.svd(b, full_matrices=False)
    basis = vt[:k].T
    # canonical signs: flip each column so its largest |entry| is positive
    flip = np.sign(basis[np.argmax(np.abs(basis), axis=0), np.arange(k)])
    flip[flip == 0] = 1.0
    basis = basis * flip
    return SvdModel(k, basis, s[:k].copy(), means)


def svd_transform(model: SvdModel, m: FeatureMatrix | np.ndarray) -> FeatureMatrix:
    """Project rows onto the fitted basis; output has model.k columns."""
    x = m.values if isinstance(m, FeatureMatrix) else np.asarray(m, dtype=np.float64)
    if x.shape[1] != model.basis.shape[0]:
        raise ValueError(
            f"input has {x.shape[1]} columns, model expects {model.basis.shape[0]}"
        )
    binding = m.node_type if isinstance(m, FeatureMatrix) else None
    return FeatureMatrix((x - model.col_means) @ model.basis, binding)


def _svd_compress(x: np.ndarray, k: int, seed: int, tag: str) -> np.ndarray:
    model = svd_fit(x, k, seed=_tag_seed(seed, tag))
    return x @ model.basis


def _tag_seed(seed: int, tag: str) -> int:
    # distinct sub-seeds for the independent compressions inside one assembly
    return int(stream(seed, tag).integers(2**63))


def _check_rows(*blocks: np.ndarray) -> int:
    rows = {b.shape[0] for b in blocks}
    if len(rows) != 1:
        raise ValueError(f"row counts disagree: {sorted(rows)}")
    return rows.pop()


def assemble_stage2_manufacturer(
    text: FeatureMatrix,
    categorical: FeatureMatrix,
    numeric: FeatureMatrix,
    seed: int = 0,
) -> FeatureMatrix:
    """Manufacturer feature assembly: text to 32-D, categorical+numeric to
    32-D, concatenated to 64-D."""
    _check_rows(text.values, categorical.values, numeric.values)
    text32 = _svd_compress(text.values, STAGE1_DIM, seed, "stage2/text")
    catnum = np.hstack([categorical.values, numeric.values])
    catnum32 = _svd_compress(catnum, STAGE1_DIM, seed, "stage2/catnum")
    return FeatureMatrix(np.hstack([text32, catnum32]), text.node_type)


def fuse_final_manufacturer(
    stage1: FeatureMatrix, stage2: FeatureMatrix, seed: int = 0
) -> FeatureMatrix:
    """Concatenate pretrained 32-D and assembled 64-D manufacturer vectors
    into 96-D and compress back to 64-D."""
    _check_rows(stage1.values, stage2.values)
    if stage1.cols != STAGE1_DIM or stage2.cols != STAGE2_DIM:
        raise ValueError(
            f"expected dims ({STAGE1_DIM}, {STAGE2_DIM}), got ({stage1.cols}, {stage2.cols})"
        )
    concat = np.hstack([stage1.values, stage2.values])
    return FeatureMatrix(
        _svd_compress(concat, FUSED_DIM, seed, "fuse"), stage1.node_type or stage2.node_type
    )


def assemble_product(
    text: FeatureMatrix, categorical: FeatureMatrix, seed: int = 0
) -> FeatureMatrix:
    """Product features: text and categorical blocks compressed to 64-D."""
    _check_rows(text.values, categorical.values)
    concat = np.hstack([text.values, categorical.values])
    return FeatureMatrix(_svd_compress(concat, STAGE2_DIM, seed, "product"), text.node_type)
