"""Node and relation vocabulary for the manufacturer-product heterograph."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

__all__ = [
    "NodeType",
    "Relation",
    "MAKES",
    "HAS_ATTRIBUTE",
    "HAS_IMAGE",
    "reverse_relation",
    "REVERSE_PREFIX",
]


class NodeType(str, Enum):
    """Closed set of node types; ids within each type are dense 0..count-1."""

    MANUFACTURER = "manufacturer"
    PRODUCT = "product"
    ATTRIBUTE = "attribute"
    IMAGE = "image"

    def __str__(self) -> str:  # keeps reports and file keys readable
        return self.value


@dataclass(frozen=True)
class Relation:
    """A typed, directed edge kind."""

    name: str
    src: NodeType
    dst: NodeType

    def __str__(self) -> str:
        return f"{self.name} ({self.src} -> {self.dst})"


MAKES = Relation("makes", NodeType.MANUFACTURER, NodeType.PRODUCT)
HAS_ATTRIBUTE = Relation("has_attribute", NodeType.MANUFACTURER, NodeType.ATTRIBUTE)
HAS_IMAGE = Relation("has_image", NodeType.MANUFACTURER, NodeType.IMAGE)

REVERSE_PREFIX = "rev_"


def reverse_relation(relation: Relation) -> Relation:
    """Swapped-endpoint twin of ``relation`` with a distinguishable name."""
    return Relation(REVERSE_PREFIX + relation.name, relation.dst, relation.src)
