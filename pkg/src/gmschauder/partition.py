"""Nested binary trees of supports ``S_{n,k} = [l, r]`` with split points ``m``.

Index convention: ``(0, 0)`` is the root covering ``[0, 1]``; level ``n >= 1``
holds ``2^{n-1}`` nodes ``(n, k)``.  The children of ``(n, k)`` are
``(n+1, 2k)`` on ``[l, m]`` and ``(n+1, 2k+1)`` on ``[m, r]``.  The root has
no split point; it is pinned at its right end, so its ``m`` is stored as 1.

``endpoints(N)`` is the grid ``D_N``: the split points of levels ``1..N-1``
together with 0 and 1.  The recursive dyadic order of indices used for
matrices is ``(0,0), (1,0), (2,0), (2,1), (3,0), ...``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .errors import PartitionError, RangeError

Index = tuple[int, int]
MidpointRule = Callable[[float, float], float]


class PartitionKind(str, enum.Enum):
    DYADIC = "dyadic"
    CUSTOM = "custom"


@dataclass(frozen=True)
class Support:
    n: int
    k: int
    l: float
    m: float
    r: float

    @property
    def index(self) -> Index:
        return (self.n, self.k)

    @property
    def is_root(self) -> bool:
        return self.n == 0


ROOT = Support(0, 0, 0.0, 1.0, 1.0)


def dyadic_support(n: int, k: int) -> Support:
    if n == 0:
        return ROOT
    return Support(n, k, k * 2.0 ** (-n + 1), (2 * k + 1) * 2.0 ** (-n), (k + 1) * 2.0 ** (-n + 1))


def ordered_indices(depth: int) -> list[Index]:
    """Root followed by levels ``1..depth-1`` in recursive dyadic order."""
    out: list[Index] = [(0, 0)]
    for n in range(1, depth):
        out.extend((n, k) for k in range(2 ** (n - 1)))
    return out


class SupportTree:
    """Immutable family of supports for levels ``1..depth`` plus the root."""

    def __init__(self, depth: int, nodes: dict[Index, Support], rho: float, kind: PartitionKind) -> None:
        self.depth = depth
        self.rho = rho
        self.kind = kind
        self._nodes = nodes
        self._lefts = {
            n: np.array([nodes[(n, k)].l for k in range(2 ** (n - 1))]) for n in range(1, depth + 1)
        }

    @classmethod
    def build(
        cls,
        depth: int,
        kind: PartitionKind | str = PartitionKind.DYADIC,
        midpoint_rule: MidpointRule | None = None,
        rho: float = 0.75,
    ) -> "SupportTree":
        """Build every node of levels ``1..depth``.

        Custom trees split each support with ``midpoint_rule(l, r)``; every
        node must satisfy ``max(r - m, m - l) < rho (r - l)``.
        """
        kind = PartitionKind(kind)
        if depth < 1:
            raise RangeError("tree depth must be at least 1")
        if not 0.0 < rho < 1.0:
            raise PartitionError("rho must lie in (0, 1)")
        if kind is PartitionKind.CUSTOM and midpoint_rule is None:
            raise PartitionError("custom partitions need a midpoint rule")
        nodes: dict[Index, Support] = {(0, 0): ROOT}
        for n in range(1, depth + 1):
            for k in range(2 ** (n - 1)):
                if kind is PartitionKind.DYADIC:
                    node = dyadic_support(n, k)
                else:
                    if n == 1:
                        l, r = 0.0, 1.0
                    else:
                        parent = nodes[(n - 1, k // 2)]
                        l, r = (parent.l, parent.m) if k % 2 == 0 else (parent.m, parent.r)
                    node = Support(n, k, l, float(midpoint_rule(l, r)), r)
                if not node.l < node.m < node.r:
                    raise PartitionError(f"node {node.index}: split point {node.m} outside ({node.l}, {node.r})")
                if max(node.r - node.m, node.m - node.l) >= rho * (node.r - node.l):
                    raise PartitionError(
                        f"node {node.index} on [{node.l}, {node.r}] with split {node.m} violates the balance bound rho={rho}"
                    )
                nodes[node.index] = node
        return cls(depth, nodes, rho, kind)

    def node(self, n: int, k: int) -> Support:
        try:
            return self._nodes[(n, k)]
        except KeyError:
            raise RangeError(f"node ({n}, {k}) is not part of a tree of depth {self.depth}") from None

    def __contains__(self, index: Index) -> bool:
        return index in self._nodes

    def __iter__(self) -> Iterator[Support]:
        for index in ordered_indices(self.depth + 1):
            yield self._nodes[index]

    def level(self, n: int) -> list[Support]:
        if not 1 <= n <= self.depth:
            raise RangeError(f"level {n} outside 1..{self.depth}")
        return [self._nodes[(n, k)] for k in range(2 ** (n - 1))]

    def indices(self, depth: int) -> list[Index]:
        """Indices of root and levels ``1..depth-1`` in recursive dyadic order."""
        if depth < 1 or depth - 1 > self.depth:
            raise RangeError(f"depth {depth} needs levels beyond the tree depth {self.depth}")
        return ordered_indices(depth)

    def points(self, depth: int) -> np.ndarray:
        """Pinning times of :meth:`indices`: 1 for the root, ``m_{n,k}`` otherwise."""
        return np.array([self._nodes[i].m for i in self.indices(depth)])

    def endpoints(self, depth: int) -> np.ndarray:
        """Sorted grid ``D_depth``."""
        if depth < 1:
            raise RangeError("grid depth must be at least 1")
        if depth > self.depth:
            raise RangeError(f"grid D_{depth} requested from a tree of depth {self.depth}")
        mids = [self._nodes[i].m for i in ordered_indices(depth)[1:]]
        return np.array(sorted([0.0, 1.0] + mids))

    def locate(self, t: np.ndarray | float, n: int) -> np.ndarray:
        """Position ``k`` of the level-``n`` support containing ``t`` (right-closed at 1)."""
        t = np.asarray(t, dtype=float)
        lefts = self._lefts[n]
        return np.clip(np.searchsorted(lefts, t, side="right") - 1, 0, len(lefts) - 1)
