"""Dense per-node feature matrices."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .schema import NodeType

__all__ = ["FeatureMatrix"]


@dataclass(frozen=True)
class FeatureMatrix:
    """Row-per-node real matrix, optionally bound to a node type.

    Values must be finite and two-dimensional. The array is frozen on
    construction so matrices can be shared across graph variants.
    """

    values: np.ndarray
    node_type: NodeType | None = None

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("feature matrix contains non-finite values")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def bind(self, node_type: NodeType) -> "FeatureMatrix":
        return FeatureMatrix(self.values, node_type)

    def take_rows(self, index: np.ndarray) -> "FeatureMatrix":
        return FeatureMatrix(self.values[np.asarray(index, dtype=np.int64)], self.node_type)
