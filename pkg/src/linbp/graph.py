"""Pairwise binary MRF topology and parameters.

Edges are undirected and stored once as ``(i, j)`` with ``i < j``. Message
passing code works on *directed* edges; directed edge ``2e`` is ``i -> j`` and
``2e + 1`` is ``j -> i`` for undirected edge ``e``, so the reverse of directed
edge ``d`` is always ``d ^ 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np


class GraphError(ValueError):
    pass


def _key(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class FactorGraph:
    """Immutable pairwise MRF: topology, couplings ``J`` and biases ``theta``."""

    node_count: int
    edges: tuple[tuple[int, int], ...]
    couplings: tuple[float, ...]
    biases: tuple[float, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.couplings) != len(self.edges):
            raise GraphError("one coupling per edge required")
        if len(self.biases) != self.node_count:
            raise GraphError("one bias per node required")
        object.__setattr__(self, "_index", {e: n for n, e in enumerate(self.edges)})

    @cached_property
    def adjacency(self) -> tuple[tuple[int, ...], ...]:
        nbrs: list[list[int]] = [[] for _ in range(self.node_count)]
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        return tuple(tuple(sorted(n)) for n in nbrs)

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(n) for n in self.adjacency], dtype=int)

    def neighbors(self, j: int) -> tuple[int, ...]:
        return self.adjacency[j]

    def closed_neighborhood(self, j: int) -> tuple[int, ...]:
        """``(j, *neighbors)``: self first, then neighbors in ascending order."""
        return (j,) + self.adjacency[j]

    def has_edge(self, i: int, j: int) -> bool:
        return _key(i, j) in self._index

    def edge_index(self, i: int, j: int) -> int:
        try:
            return self._index[_key(i, j)]
        except KeyError:
            raise GraphError(f"no edge ({i}, {j})") from None

    def coupling(self, i: int, j: int) -> float:
        return self.couplings[self.edge_index(i, j)]

    # -- directed edge bookkeeping -------------------------------------------

    @cached_property
    def directed_edges(self) -> np.ndarray:
        """``(2|E|, 2)`` array of ``[source, target]`` rows."""
        out = np.empty((2 * len(self.edges), 2), dtype=int)
        for e, (i, j) in enumerate(self.edges):
            out[2 * e] = (i, j)
            out[2 * e + 1] = (j, i)
        return out

    def directed_index(self, src: int, dst: int) -> int:
        e = self.edge_index(src, dst)
        return 2 * e if src < dst else 2 * e + 1

    @cached_property
    def reverse(self) -> np.ndarray:
        return np.arange(2 * len(self.edges)) ^ 1

    @cached_property
    def incidence(self) -> np.ndarray:
        """``(N, 2|E|)`` matrix with a 1 where the directed edge enters the node."""
        B = np.zeros((self.node_count, 2 * len(self.edges)))
        if len(self.edges):
            B[self.directed_edges[:, 1], np.arange(2 * len(self.edges))] = 1.0
        return B

    def directed_couplings(self) -> np.ndarray:
        return np.repeat(np.asarray(self.couplings, dtype=float), 2)

    # -- functional updates ----------------------------------------------------

    def with_coupling(self, edge: Sequence[int], J: float) -> "FactorGraph":
        e = self.edge_index(*edge)
        couplings = list(self.couplings)
        couplings[e] = float(J)
        return replace(self, couplings=tuple(couplings))

    def with_couplings(self, values: Iterable[float]) -> "FactorGraph":
        values = tuple(float(v) for v in values)
        return replace(self, couplings=values)

    def relabel(self, perm: Sequence[int]) -> "FactorGraph":
        """Graph with node ``n`` renamed ``perm[n]``."""
        edges = [(perm[i], perm[j]) for i, j in self.edges]
        g = build_graph(self.node_count, edges)
        for (i, j), J in zip(edges, self.couplings):
            g = g.with_coupling((i, j), J)
        return g


def build_graph(node_count: int, edges: Iterable[Sequence[int]]) -> FactorGraph:
    """Graph with the given undirected edges, all ``J = 0`` and ``theta = 0``.

    Raises:
        GraphError: on self-loops, duplicate edges or out-of-range indices.
    """
    if int(node_count) < 1:
        raise GraphError("node_count must be positive")
    seen: set[tuple[int, int]] = set()
    ordered = []
    for pair in edges:
        i, j = (int(v) for v in pair)
        if not (0 <= i < node_count and 0 <= j < node_count):
            raise GraphError(f"edge ({i}, {j}) out of range for {node_count} nodes")
        if i == j:
            raise GraphError(f"self-loop at node {i}")
        k = _key(i, j)
        if k in seen:
            raise GraphError(f"duplicate edge {k}")
        seen.add(k)
        ordered.append(k)
    return FactorGraph(
        node_count=int(node_count),
        edges=tuple(ordered),
        couplings=(0.0,) * len(ordered),
        biases=(0.0,) * int(node_count),
    )


def chain_graph(n: int) -> FactorGraph:
    return build_graph(n, [(i, i + 1) for i in range(n - 1)])


def set_coupling(graph: FactorGraph, edge: Sequence[int], J: float) -> FactorGraph:
    return graph.with_coupling(edge, J)


def degree_stats(graph: FactorGraph) -> tuple[int, float]:
    """``(max degree, mean degree)``."""
    deg = graph.degrees
    return int(deg.max(initial=0)), float(deg.mean())
