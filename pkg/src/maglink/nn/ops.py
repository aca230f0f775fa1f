"""Primitive differentiable operations and the finite-difference checker.

Backward functions take the upstream gradient and a cache from the matching
forward call. Everything runs in float64.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..rng import stream

__all__ = [
    "linear",
    "linear_backward",
    "relu",
    "relu_backward",
    "leaky_relu",
    "leaky_relu_backward",
    "dropout",
    "dropout_backward",
    "dot_decoder",
    "dot_decoder_backward",
    "weighted_bce",
    "sigmoid",
    "finite_diff_check",
]


def _check_2d(name: str, arr: np.ndarray) -> None:
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, tuple]:
    _check_2d("x", x)
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ValueError(f"shape mismatch: x{x.shape} @ w{w.shape} + b{b.shape}")
    return x @ w + b, (x, w)


def linear_backward(grad_y: np.ndarray, cache: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x, w = cache
    return grad_y @ w.T, x.T @ grad_y, grad_y.sum(axis=0)


def relu(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mask = x > 0
    return np.where(mask, x, 0.0), mask


def relu_backward(grad_y: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.where(mask, grad_y, 0.0)


def leaky_relu(x: np.ndarray, slope: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    mask = x > 0
    return np.where(mask, x, slope * x), mask


def leaky_relu_backward(grad_y: np.ndarray, mask: np.ndarray, slope: float = 0.2) -> np.ndarray:
    return np.where(mask, grad_y, slope * grad_y)


def dropout(
    x: np.ndarray,
    p: float,
    training: bool,
    seed: int = 0,
    tag: str = "dropout",
    index: int = 0,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Inverted dropout; the mask is a pure function of (seed, tag, index)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x, None
    mask = stream(seed, tag, index).random(x.shape) >= p
    return x * mask / (1.0 - p), mask


def dropout_backward(grad_y: np.ndarray, mask: np.ndarray | None, p: float) -> np.ndarray:
    if mask is None:
        return grad_y
    return grad_y * mask / (1.0 - p)


def dot_decoder(
    src_emb: np.ndarray, dst_emb: np.ndarray, edges: np.ndarray
) -> tuple[np.ndarray, tuple]:
    """Score each (u, v) pair by the dot product of its embeddings."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if src_emb.shape[1] != dst_emb.shape[1]:
        raise ValueError("embedding dims differ between endpoints")
    if edges.size and (
        edges[:, 0].min() < 0
        or edges[:, 0].max() >= src_emb.shape[0]
        or edges[:, 1].min() < 0
        or edges[:, 1].max() >= dst_emb.shape[0]
    ):
        raise IndexError("edge index out of range for embeddings")
    scores = np.einsum("ij,ij->i", src_emb[edges[:, 0]], dst_emb[edges[:, 1]])
    return scores, (src_emb, dst_emb, edges)


def dot_decoder_backward(grad_scores: np.ndarray, cache: tuple) -> tuple[np.ndarray, np.ndarray]:
    src_emb, dst_emb, edges = cache
    grad_src = np.zeros_like(src_emb)
    grad_dst = np.zeros_like(dst_emb)
    np.add.at(grad_src, edges[:, 0], grad_scores[:, None] * dst_emb[edges[:, 1]])
    np.add.at(grad_dst, edges[:, 1], grad_scores[:, None] * src_emb[edges[:, 0]])
    return grad_src, grad_dst


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + e^x), stable for large |x|
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def weighted_bce(
    scores: np.ndarray, labels: np.ndarray, pos_weight: float = 1.0
) -> tuple[float, np.ndarray]:
    """Mean weighted binary cross-entropy on logits, with its gradient.

    Computed in log-sum-exp form so the loss stays finite for |logit|
    up to 1e4 and beyond.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    if s.shape[0] == 0:
        raise ValueError("empty input to weighted_bce")
    sp = _softplus(-s)
    per_sample = pos_weight * y * sp + (1.0 - y) * (s + sp)
    sig = sigmoid(s)
    grad = (pos_weight * y * (sig - 1.0) + (1.0 - y) * sig) / s.shape[0]
    return float(per_sample.mean()), grad


def finite_diff_check(
    f: Callable[[np.ndarray], tuple[float, np.ndarray]],
    point: np.ndarray,
    h: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a flat vector to (scalar value, analytic gradient). The error
    at each coordinate is |a - n| / max(1, |a|, |n|).
    """
    x0 = np.asarray(point, dtype=np.float64).ravel().copy()
    value, grad = f(x0)
    if not np.isfinite(value):
        raise ValueError("function value is not finite at the probe point")
    grad = np.asarray(grad, dtype=np.float64).ravel()
    if grad.shape != x0.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match point {x0.shape}")
    numeric = np.empty_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xp[i] += h
        xm = x0.copy()
        xm[i] -= h
        fp, fm = f(xp)[0], f(xm)[0]
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite evaluation while perturbing coordinate {i}")
        numeric[i] = (fp - fm) / (2.0 * h)
    denom = np.maximum(1.0, np.maximum(np.abs(grad), np.abs(numeric)))
    return float(np.max(np.abs(grad - numeric) / denom))
