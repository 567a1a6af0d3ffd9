"""Belief propagation in LLR form on a binary pairwise MRF.

All engines run a synchronous (flood) schedule from zero messages and accept
either a single LLR vector ``(N,)`` or a batch of slots ``(T, N)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import FactorGraph, degree_stats


def boxplus(a, b):
    """``S(a, b) = ln((1 + e^(a+b)) / (e^a + e^b))``.

    Evaluated as a difference of log-sum-exps, which stays finite for any
    finite inputs and equals ``2 atanh(tanh(a/2) tanh(b/2))``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.logaddexp(0.0, a + b) - np.logaddexp(a, b)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class BpVariant:
    kind: str = "plain"
    rho: float = 1.0

    def __post_init__(self):
        if self.kind not in ("plain", "utrw"):
            raise ValueError(f"unknown BP variant {self.kind!r}")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if self.kind == "plain" and self.rho != 1.0:
            raise ValueError("plain BP has rho = 1")

    @classmethod
    def plain(cls) -> "BpVariant":
        return cls("plain", 1.0)

    @classmethod
    def utrw(cls, rho: float) -> "BpVariant":
        return cls("utrw", rho)


@dataclass
class MessageState:
    """Messages indexed by directed edge (see ``FactorGraph.directed_edges``)."""

    values: np.ndarray
    iteration: int

    def message(self, graph: FactorGraph, src: int, dst: int):
        return self.values[..., graph.directed_index(src, dst)]


def _check_gamma(graph: FactorGraph, gamma) -> np.ndarray:
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape[-1] != graph.node_count:
        raise ValueError(f"expected {graph.node_count} LLRs per slot, got {gamma.shape[-1]}")
    if not np.all(np.isfinite(gamma)):
        raise ValueError("LLRs must be finite")
    return gamma


def bp_iterate(graph: FactorGraph, gamma, variant: BpVariant = BpVariant(),
               iterations: int = 3):
    """Run ``iterations`` synchronous BP rounds; return ``(lambda, MessageState)``.

    ``utrw`` uses coupling ``J / rho``, feeds back ``(rho - 1)`` times the reverse
    message, damps the other incoming messages by ``rho`` and forms beliefs
    ``gamma + rho * sum(messages)``.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    gamma = _check_gamma(graph, gamma)
    src = graph.directed_edges[:, 0]
    rev = graph.reverse
    B = graph.incidence
    rho = variant.rho
    J = graph.directed_couplings() / rho
    m = np.zeros(gamma.shape[:-1] + (len(src),))
    for _ in range(iterations):
        incoming = m @ B.T
        if variant.kind == "plain":
            arg = gamma[..., src] + incoming[..., src] - m[..., rev]
        else:
            arg = (gamma[..., src] + (rho - 1.0) * m[..., rev]
                   + rho * (incoming[..., src] - m[..., rev]))
        m = boxplus(J, arg)
    lam = gamma + rho * (m @ B.T)
    return lam, MessageState(m, iterations)


def learn_couplings(decisions, zeta: float, graph: FactorGraph) -> FactorGraph:
    """Set every ``J_kj`` to ``zeta`` times the mean agreement (+1) / disagreement (-1)
    of the two endpoints' binary decisions over a ``(T, N)`` history."""
    d = np.asarray(decisions)
    if d.ndim != 2 or d.shape[0] == 0:
        raise ValueError("decision history must be a non-empty (T, N) array")
    if d.shape[1] != graph.node_count:
        raise ValueError("decision history width must equal node count")
    if not np.isin(d, (0, 1)).all():
        raise ValueError("decisions must be binary")
    if not graph.edges:
        return graph
    e = np.array(graph.edges)
    agree = (d[:, e[:, 0]] == d[:, e[:, 1]])
    J = zeta * (2.0 * agree.sum(axis=0) - d.shape[0]) / d.shape[0]
    return graph.with_couplings(J)


def optimal_eap(graph: FactorGraph) -> float:
    """Uniform edge appearance probability ``min(1, 1 / (2 * mean degree))``."""
    _, mean_deg = degree_stats(graph)
    if mean_deg == 0:
        return 1.0
    return min(1.0, 1.0 / (2.0 * mean_deg))
