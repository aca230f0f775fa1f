"""Independent oracles used by the unit and acceptance suites.

These deliberately avoid the code paths they are checking: the eigensolver
is hand-rolled cyclic Jacobi (not LAPACK SVD), and the PR sweep enumerates
thresholds directly.
"""

import numpy as np


def jacobi_eigenvalues(sym: np.ndarray, sweeps: int = 60) -> np.ndarray:
    """Symmetric eigenvalues by cyclic Jacobi rotations, descending."""
    a = sym.copy().astype(np.float64)
    n = a.shape[0]
    scale = max(np.max(np.abs(a)), 1e-300)
    for _ in range(sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= 1e-15 * scale * n:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) <= 1e-18 * scale:
                    continue
                theta = 0.5 * np.arctan2(2.0 * a[p, q], a[q, q] - a[p, p])
                c, s = np.cos(theta), np.sin(theta)
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
    return np.sort(np.maximum(np.diag(a), 0.0))[::-1]


def top_k_energy_oracle(x: np.ndarray, k: int) -> float:
    """Exact top-k squared-singular-value mass via the Gram matrix."""
    gram = x.T @ x if x.shape[1] <= x.shape[0] else x @ x.T
    return float(np.sum(jacobi_eigenvalues(gram)[:k]))


def pr_sweep_oracle(scores, labels) -> float:
    """Exhaustive threshold sweep with right-step accumulation."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = labels.sum()
    area = 0.0
    prev_recall = 0.0
    for t in sorted(set(scores.tolist()), reverse=True):
        sel = scores >= t
        tp = int(labels[sel].sum())
        fp = int(sel.sum()) - tp
        recall = tp / n_pos
        precision = tp / (tp + fp)
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return area


def random_metric_instance(seed, max_n=200, stream=None):
    from maglink.rng import stream as mk_stream

    gen = mk_stream(seed, "metric-instance")
    n = int(gen.integers(2, max_n + 1))
    labels = (gen.random(n) < gen.uniform(0.2, 0.8)).astype(int)
    if labels.sum() == 0:
        labels[0] = 1
    if labels.sum() == n:
        labels[-1] = 0
    if gen.random() < 0.5:
        scores = np.round(gen.standard_normal(n), 1)  # force ties
    else:
        scores = gen.standard_normal(n)
    return scores, labels


def random_svd_instance(seed):
    """Mixed-rank random matrices up to 64x64."""
    from maglink.rng import stream as mk_stream

    gen = mk_stream(seed, "svd-acceptance")
    n = int(gen.integers(2, 65))
    d = int(gen.integers(2, 65))
    kind = seed % 4
    if kind == 0:
        x = gen.standard_normal((n, d))
    elif kind == 1:
        r = int(gen.integers(1, min(n, d) + 1))
        x = gen.standard_normal((n, r)) @ gen.standard_normal((r, d))
    elif kind == 2:
        x = gen.standard_normal((n, d)) * np.exp(gen.standard_normal(d))
    else:
        x = gen.standard_normal((n, d))
        x[gen.random(n) < 0.5] = 0.0
    k = int(gen.integers(1, min(n, d) + 1))
    return x, k
