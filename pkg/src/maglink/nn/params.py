"""Named parameter tensors with shared Adam state."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..container import read_container, write_container
from ..rng import stream

__all__ = ["ParameterSet", "init_uniform", "adam_step", "NonFiniteGradientError"]


class NonFiniteGradientError(RuntimeError):
    pass


def init_uniform(shape: tuple[int, ...], fan_in: int, seed: int, tag: str) -> np.ndarray:
    """Fan-in-scaled uniform init, seeded per tensor."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return stream(seed, f"init/{tag}").uniform(-bound, bound, size=shape)


class ParameterSet:
    """All learnable tensors of one model plus Adam moments.

    The step counter is shared across tensors; a parameter set is owned by
    exactly one trainer at a time.
    """

    def __init__(self) -> None:
        self.tensors: dict[str, np.ndarray] = {}
        self.moment1: dict[str, np.ndarray] = {}
        self.moment2: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.tensors:
            raise KeyError(f"parameter {name!r} already registered")
        arr = np.asarray(value, dtype=np.float64)
        self.tensors[name] = arr
        self.moment1[name] = np.zeros_like(arr)
        self.moment2[name] = np.zeros_like(arr)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(t) for name, t in self.tensors.items()}

    def copy(self) -> "ParameterSet":
        out = ParameterSet()
        out.tensors = {k: v.copy() for k, v in self.tensors.items()}
        out.moment1 = {k: v.copy() for k, v in self.moment1.items()}
        out.moment2 = {k: v.copy() for k, v in self.moment2.items()}
        out.step = self.step
        return out

    def save(self, path: str | Path) -> None:
        arrays: dict[str, np.ndarray] = {}
        for name, t in self.tensors.items():
            arrays[f"t/{name}"] = t
            arrays[f"m/{name}"] = self.moment1[name]
            arrays[f"v/{name}"] = self.moment2[name]
        write_container(path, "checkpoint", 1, {"step": self.step, "names": self.names()}, arrays)

    @classmethod
    def load(cls, path: str | Path) -> "ParameterSet":
        meta, arrays = read_container(path, "checkpoint", 1)
        out = cls()
        for name in meta["names"]:
            out.tensors[name] = arrays[f"t/{name}"]
            out.moment1[name] = arrays[f"m/{name}"]
            out.moment2[name] = arrays[f"v/{name}"]
        out.step = int(meta["step"])
        return out


def adam_step(
    params: ParameterSet,
    grads: dict[str, np.ndarray],
    lr: float,
    weight_decay: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParameterSet:
    """One bias-corrected Adam update; L2 term is added to the gradient."""
    params.step += 1
    t = params.step
    for name in params.names():
        theta = params.tensors[name]
        g = grads[name]
        if g.shape != theta.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, expected {theta.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for tensor {name!r}")
        if weight_decay:
            g = g + weight_decay * theta
        m = params.moment1[name]
        v = params.moment2[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        theta -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params
