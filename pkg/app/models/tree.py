"""
Addressing of the full binary tree.

A node is identified by its generation and its index inside the generation;
the index bits, read from the most significant one, are the path from the
root (0 = first child, 1 = second child).
"""

from dataclasses import dataclass
from typing import Iterator

from app.core.exceptions import DepthOutOfRangeError

# 64-bit indices minus guard bits
MAX_DEPTH = 60


def check_depth(n: int) -> int:
    """Validate a generation number against the supported depth."""
    if n < 0:
        raise DepthOutOfRangeError(f"Generation must be non-negative, got {n}")
    if n > MAX_DEPTH:
        raise DepthOutOfRangeError(
            f"Generation {n} exceeds the supported depth {MAX_DEPTH}"
        )
    return n


def generation_size(n: int) -> int:
    """Number of nodes of generation n: |G_n| = 2^n."""
    return 1 << check_depth(n)


def tree_size(n: int) -> int:
    """Number of nodes up to generation n: |T_n| = 2^(n+1) - 1."""
    return (1 << (check_depth(n) + 1)) - 1


@dataclass(frozen=True, order=True)
class NodeId:
    """Position of a node: generation |i| and index in [0, 2^generation)."""
    generation: int
    index: int

    def __post_init__(self):
        check_depth(self.generation)
        if not 0 <= self.index < (1 << self.generation):
            raise ValueError(
                f"Index {self.index} out of range for generation {self.generation}"
            )

    @classmethod
    def root(cls) -> "NodeId":
        return cls(0, 0)

    @property
    def is_root(self) -> bool:
        return self.generation == 0

    def children(self) -> tuple["NodeId", "NodeId"]:
        """The two children (g+1, 2k) and (g+1, 2k+1)."""
        if self.generation + 1 > MAX_DEPTH:
            raise DepthOutOfRangeError(
                f"Children of generation {self.generation} exceed the supported depth"
            )
        return (
            NodeId(self.generation + 1, 2 * self.index),
            NodeId(self.generation + 1, 2 * self.index + 1),
        )

    def parent(self) -> "NodeId":
        """Parent (g-1, k // 2); the root has none."""
        if self.is_root:
            raise ValueError("The root has no parent")
        return NodeId(self.generation - 1, self.index // 2)

    def path(self) -> str:
        """Bit string from the root, '' for the root."""
        if self.is_root:
            return ""
        return format(self.index, f"0{self.generation}b")

    @classmethod
    def from_path(cls, bits: str) -> "NodeId":
        if any(b not in "01" for b in bits):
            raise ValueError(f"Invalid path {bits!r}")
        return cls(len(bits), int(bits, 2) if bits else 0)


def children(node: NodeId) -> tuple[NodeId, NodeId]:
    return node.children()


def parent(node: NodeId) -> NodeId:
    return node.parent()


def iter_generation(n: int) -> Iterator[NodeId]:
    """Level-order enumeration of generation n."""
    for k in range(generation_size(n)):
        yield NodeId(n, k)
