"""Linearized message passing.

Message ``k -> j`` is ``c_jk * (gamma_k + sum of messages into k except from j)``
and node ``j`` forms ``lambda_j = s_j * gamma_j + sum of messages into j``. The
self weight ``s_j`` defaults to 1; optimizers may lower it when they shrink a
fusion vector to satisfy the convergence bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .graph import FactorGraph, degree_stats


class DivergenceError(ArithmeticError):
    """Linear message passing blew up; ``iteration`` is the offending round."""

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


class NoFixedPointError(ArithmeticError):
    pass


def coefficient_from_coupling(J):
    """Slope of ``S(J, b)`` at ``b = 0``: ``(e^(2J) - 1) / (1 + e^J)^2 = tanh(J / 2)``.

    The tanh form is used because the ratio overflows for large ``|J|``.
    """
    out = np.tanh(0.5 * np.asarray(J, dtype=float))
    return out if out.ndim else float(out)


def convergence_bound(graph: FactorGraph) -> float:
    """Largest admissible ``|c|`` for an l-inf contraction; ``inf`` when no node
    relays between two neighbors."""
    max_deg, _ = degree_stats(graph)
    return np.inf if max_deg <= 1 else 1.0 / (max_deg - 1)


@dataclass(frozen=True)
class FusionWeights:
    """Per directed-edge coefficients plus per-node self weights and thresholds.

    ``coeffs[d]`` for directed edge ``d = k -> j`` is ``c_jk``, the weight node
    ``j`` puts on what it hears from ``k``.
    """

    coeffs: np.ndarray
    self_weights: np.ndarray
    thresholds: np.ndarray
    damping: float = 1.0

    @classmethod
    def zeros(cls, graph: FactorGraph) -> "FusionWeights":
        N = graph.node_count
        return cls(np.zeros(2 * len(graph.edges)), np.ones(N), np.zeros(N))

    @classmethod
    def from_couplings(cls, graph: FactorGraph) -> "FusionWeights":
        """Linearization of BP on ``graph``: ``c_jk = tanh(J_kj / 2)``."""
        w = cls.zeros(graph)
        return replace(w, coeffs=coefficient_from_coupling(graph.directed_couplings()))

    @classmethod
    def uniform(cls, graph: FactorGraph, c: float) -> "FusionWeights":
        w = cls.zeros(graph)
        return replace(w, coeffs=np.full(2 * len(graph.edges), float(c)))

    @property
    def effective(self) -> np.ndarray:
        return self.damping * np.asarray(self.coeffs, dtype=float)

    def node_vector(self, graph: FactorGraph, j: int) -> np.ndarray:
        """Fusion vector of node ``j`` over ``(j, *neighbors)``."""
        vec = [self.self_weights[j]]
        vec += [self.coeffs[graph.directed_index(k, j)] for k in graph.neighbors(j)]
        return np.array(vec, dtype=float)

    def with_node_vector(self, graph: FactorGraph, j: int, c) -> "FusionWeights":
        coeffs = np.array(self.coeffs, dtype=float)
        selfw = np.array(self.self_weights, dtype=float)
        selfw[j] = c[0]
        for k, ck in zip(graph.neighbors(j), c[1:]):
            coeffs[graph.directed_index(k, j)] = ck
        return replace(self, coeffs=coeffs, self_weights=selfw)

    def with_thresholds(self, thresholds) -> "FusionWeights":
        return replace(self, thresholds=np.asarray(thresholds, dtype=float))


@dataclass
class LinearSystem:
    """Message map ``m -> T m + xi`` over directed edges."""

    T: np.ndarray
    xi: Optional[np.ndarray] = None


def linear_iterate(graph: FactorGraph, weights: FusionWeights, gamma, iterations: int = 3,
                   divergence_cap: float = 1e8):
    """Synchronous linear message passing from zero messages.

    Returns ``(lambda, MessageState)``. Raises :class:`DivergenceError` once a
    message is non-finite or exceeds ``divergence_cap`` times the largest input
    magnitude.
    """
    from .bp import MessageState

    gamma = np.asarray(gamma, dtype=float)
    if not np.all(np.isfinite(gamma)):
        raise ValueError("LLRs must be finite")
    src = graph.directed_edges[:, 0]
    rev = graph.reverse
    B = graph.incidence
    c = weights.effective
    scale = divergence_cap * max(1.0, float(np.max(np.abs(gamma), initial=0.0)))
    m = np.zeros(gamma.shape[:-1] + (len(src),))
    for it in range(1, iterations + 1):
        incoming = m @ B.T
        m = c * (gamma[..., src] + incoming[..., src] - m[..., rev])
        peak = np.max(np.abs(m), initial=0.0)
        if not np.isfinite(peak) or peak > scale:
            raise DivergenceError(f"linear messages diverged at iteration {it}", it)
    lam = weights.self_weights * gamma + m @ B.T
    return lam, MessageState(m, iterations)


def jacobian(graph: FactorGraph, weights: FusionWeights, gamma=None) -> LinearSystem:
    """``T[k->n, p->k] = c_nk`` for ``p`` a neighbor of ``k`` other than ``n``."""
    E2 = 2 * len(graph.edges)
    c = weights.effective
    T = np.zeros((E2, E2))
    for d, (k, n) in enumerate(graph.directed_edges):
        for p in graph.neighbors(k):
            if p != n:
                T[d, graph.directed_index(p, k)] = c[d]
    xi = None
    if gamma is not None:
        xi = c * np.asarray(gamma, dtype=float)[..., graph.directed_edges[:, 0]]
    return LinearSystem(T, xi)


def spectral_radius_estimate(T: np.ndarray, steps: int = 200) -> float:
    """Power-iteration growth rate ``||T^steps x||^(1/steps)``."""
    if T.size == 0:
        return 0.0
    x = np.random.default_rng(0).random(T.shape[0]) + 0.5
    x /= np.linalg.norm(x)
    log_growth = 0.0
    for _ in range(steps):
        x = T @ x
        nrm = np.linalg.norm(x)
        if nrm == 0.0:
            return 0.0
        log_growth += np.log(nrm)
        x /= nrm
    return float(np.exp(log_growth / steps))


def check_contraction(graph: FactorGraph, weights: FusionWeights):
    """``(certified, ||T||_inf, spectral radius estimate)``; certified iff the
    l-inf norm is below 1."""
    T = jacobian(graph, weights).T
    norm = float(np.abs(T).sum(axis=1).max(initial=0.0))
    return norm < 1.0, norm, spectral_radius_estimate(T)


def _spectral_radius(T: np.ndarray) -> float:
    if T.size == 0:
        return 0.0
    if T.shape[0] <= 2000:
        return float(np.max(np.abs(np.linalg.eigvals(T))))
    return spectral_radius_estimate(T)


def fixed_point_weights(graph: FactorGraph, weights: FusionWeights) -> np.ndarray:
    """Matrix ``A`` with ``lambda = A.T @ gamma`` at the linear fixed point.

    Raises:
        NoFixedPointError: if the message Jacobian has spectral radius >= 1.
    """
    N = graph.node_count
    E2 = 2 * len(graph.edges)
    At = np.diag(np.asarray(weights.self_weights, dtype=float))
    if E2 == 0:
        return At.T
    T = jacobian(graph, weights).T
    radius = _spectral_radius(T)
    if radius >= 1.0:
        raise NoFixedPointError(f"spectral radius {radius:.4g} >= 1")
    X = np.zeros((E2, N))
    X[np.arange(E2), graph.directed_edges[:, 0]] = weights.effective
    if E2 <= 2000:
        M = np.linalg.solve(np.eye(E2) - T, X)
    else:
        M = X.copy()
        for _ in range(10_000):
            nxt = X + T @ M
            if np.max(np.abs(nxt - M)) < 1e-14:
                M = nxt
                break
            M = nxt
    At = At + graph.incidence @ M
    return At.T


def unrolled_weights(graph: FactorGraph, weights: FusionWeights, iterations: int) -> np.ndarray:
    """``A`` with ``lambda = A.T @ gamma`` after ``iterations`` rounds."""
    lam, _ = linear_iterate(graph, weights, np.eye(graph.node_count), iterations)
    return lam


def scale_weights(weights: FusionWeights, rho: float) -> FusionWeights:
    """Multiply every fusion coefficient, self weights included, by ``rho``."""
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    return replace(weights,
                   coeffs=np.asarray(weights.coeffs, dtype=float) * rho,
                   self_weights=np.asarray(weights.self_weights, dtype=float) * rho)
