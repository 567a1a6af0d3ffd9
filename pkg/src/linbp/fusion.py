"""Conditional statistics and per-node linear fusion design.

Each node ``j`` fuses the inputs of its closed neighborhood ``M_j = (j, *N_j)``.
Statistics are conditioned on the (true or estimated) occupancy label of ``j``
and, for false-alarm/detection evaluation, additionally on the label pattern of
other nodes: the one-hop neighbors (``"neighborhood"`` mode) or every other node
(``"full"`` mode, small networks only).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .graph import FactorGraph
from .linear import (
    FusionWeights,
    coefficient_from_coupling,
    convergence_bound,
    fixed_point_weights,
    unrolled_weights,
)
from .qfunc import Q, Q_inv

FULL_MODE_MAX_NODES = 12
CERTIFICATION_EPS = 1e-6


class OptimizerError(ValueError):
    pass


class ZeroInformationError(OptimizerError):
    """Both hypotheses produce the same conditional mean; nothing to fuse."""


@dataclass
class PatternTable:
    """Moments of the inputs over ``members`` given ``x_j = v`` and the label
    pattern ``b`` of ``pattern_nodes``."""

    pattern_nodes: tuple
    members: tuple
    probs: list            # per v: {b: p(b | v)}
    means: list            # per v: {b: mean vector}
    covs: list             # per v: {b: covariance}
    sparse: list           # per v: patterns with too few samples for own moments
    global_mean: list
    global_cov: list


@dataclass
class NodeStats:
    node: int
    members: tuple
    mean: list             # per v, over members; None if insufficient
    cov: list
    counts: tuple
    patterns: dict = field(default_factory=dict)

    @property
    def insufficient(self) -> bool:
        return min(self.counts) < 2

    @property
    def mean_shift(self) -> np.ndarray:
        return self.mean[1] - self.mean[0]


@dataclass
class ConditionalStats:
    nodes: list
    window: int
    fallback_hits: dict = field(default_factory=dict)

    def __getitem__(self, j: int) -> NodeStats:
        return self.nodes[j]


def _moments(x: np.ndarray, ridge: float):
    mean = x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
    return mean, cov + ridge * np.eye(len(mean))


def _pattern_table(gamma, labels, j, pattern_nodes, members, ridge, global_moments):
    probs, means, covs, sparse = [], [], [], []
    for v in (0, 1):
        rows = labels[:, j] == v
        g = gamma[rows][:, members]
        pats = labels[rows][:, pattern_nodes]
        p_v, m_v, c_v, s_v = {}, {}, {}, set()
        if len(g):
            keys, inverse, counts = np.unique(pats, axis=0, return_inverse=True,
                                              return_counts=True)
            inverse = np.asarray(inverse).reshape(-1)
            for n, key in enumerate(keys):
                b = tuple(int(x) for x in key)
                p_v[b] = counts[n] / len(g)
                if counts[n] >= 2:
                    m_v[b], c_v[b] = _moments(g[inverse == n], ridge)
                else:
                    s_v.add(b)
        probs.append(p_v)
        means.append(m_v)
        covs.append(c_v)
        sparse.append(s_v)
    return PatternTable(tuple(pattern_nodes), tuple(members), probs, means, covs, sparse,
                        [m for m, _ in global_moments], [c for _, c in global_moments])


def estimate_conditional_stats(gamma_window, labels, graph: FactorGraph,
                               ridge: Optional[float] = None,
                               full: Optional[bool] = None) -> ConditionalStats:
    """Empirical first/second-order statistics conditioned on binary labels.

    ``ridge`` defaults, per node, to ``1e-6 * trace(cov_0) / |M_j|``. A node with
    fewer than two slots under either label is kept but flagged insufficient.
    """
    gamma = np.asarray(gamma_window, dtype=float)
    labels = np.asarray(labels).astype(np.int8)
    T, N = gamma.shape
    if T < 2:
        raise ValueError("need at least two slots")
    if labels.shape != gamma.shape:
        raise ValueError("labels must match the window shape")
    if full is None:
        full = N <= FULL_MODE_MAX_NODES
    nodes = []
    everyone = tuple(range(N))
    for j in range(N):
        members = graph.closed_neighborhood(j)
        counts = tuple(int(np.sum(labels[:, j] == v)) for v in (0, 1))
        if ridge is None:
            ref = 0 if counts[0] >= 2 else 1
            if counts[ref] >= 2:
                sub = gamma[labels[:, j] == ref][:, members]
                tr = np.trace(np.atleast_2d(np.cov(sub, rowvar=False, ddof=1)))
                r = 1e-6 * tr / len(members)
            else:
                r = 0.0
            r = max(r, 1e-12)
        else:
            r = float(ridge)
        mean, cov = [None, None], [None, None]
        full_global = [(None, None), (None, None)]
        for v in (0, 1):
            rows = labels[:, j] == v
            if counts[v] >= 2:
                mean[v], cov[v] = _moments(gamma[rows][:, members], r)
                if full:
                    full_global[v] = _moments(gamma[rows], r)
        ns = NodeStats(j, members, mean, cov, counts)
        ns.patterns["neighborhood"] = _pattern_table(
            gamma, labels, j, list(graph.neighbors(j)), list(members), r,
            list(zip(mean, cov)))
        if full:
            others = [i for i in everyone if i != j]
            ns.patterns["full"] = _pattern_table(
                gamma, labels, j, others, list(everyone), r, full_global)
        nodes.append(ns)
    return ConditionalStats(nodes, T)


def deflection(c, stats: ConditionalStats, node: int) -> float:
    """``(E[lambda | 1] - E[lambda | 0]) / sqrt(Var[lambda | 0])`` for the one-hop
    fusion ``lambda = c . gamma_{M_j}``."""
    ns = stats[node]
    if ns.insufficient:
        raise OptimizerError(f"node {node} lacks samples under one hypothesis")
    c = np.asarray(c, dtype=float)
    var = float(c @ ns.cov[0] @ c)
    if not var > 0:
        raise OptimizerError("fusion has zero variance under H0")
    return float(c @ ns.mean_shift) / math.sqrt(var)


def maximize_deflection(stats: ConditionalStats, node: int, bound: float,
                        eps: float = CERTIFICATION_EPS) -> np.ndarray:
    """Deflection-optimal fusion vector over ``M_j`` obeying ``|c_jk| <= (1-eps) bound``.

    The unconstrained optimum ``cov_0^-1 (mu_1 - mu_0)`` is normalized to unit
    self weight and, if a neighbor coefficient still exceeds the bound, shrunk
    as a whole. Deflection is scale invariant, so shrinking costs nothing.
    """
    ns = stats[node]
    if ns.insufficient:
        raise OptimizerError(f"node {node} lacks samples under one hypothesis")
    shift = ns.mean_shift
    if not np.any(shift):
        raise ZeroInformationError(f"node {node}: identical conditional means")
    try:
        c = np.linalg.solve(ns.cov[0], shift)
    except np.linalg.LinAlgError as exc:
        raise OptimizerError(f"node {node}: singular H0 covariance") from exc
    if c[0] != 0:
        c = c / abs(c[0])
    else:
        c = c / np.max(np.abs(c))
    limit = (1.0 - eps) * bound
    peak = np.max(np.abs(c[1:]), initial=0.0)
    if np.isfinite(limit) and peak > limit:
        c = c * (limit / peak)
    return c


def _pattern_moments(c, table: PatternTable, v: int, b, hits: Optional[dict]):
    if b in table.means[v]:
        mu, cov = table.means[v][b], table.covs[v][b]
    else:
        mu, cov = table.global_mean[v], table.global_cov[v]
        if mu is None:
            raise OptimizerError(f"no moments available under v={v}")
        if hits is not None:
            hits[(v, b)] = hits.get((v, b), 0) + 1
    return float(c @ mu), math.sqrt(max(float(c @ cov @ c), 1e-300))


def detection_prob(tau, v: int, c, stats: ConditionalStats, node: int,
                   mode: str = "neighborhood"):
    """``Pr{lambda_j > tau | x_j = v}`` as a Gaussian mixture over label patterns.

    ``c`` is aligned with the pattern table's members: ``M_j`` in
    ``"neighborhood"`` mode, all nodes in ``"full"`` mode.
    """
    ns = stats[node]
    if mode not in ns.patterns:
        raise ValueError(f"mode {mode!r} not available (full mode needs <= "
                         f"{FULL_MODE_MAX_NODES} nodes)")
    table = ns.patterns[mode]
    c = np.asarray(c, dtype=float)
    if c.shape != (len(table.members),):
        raise ValueError(f"fusion vector must have {len(table.members)} entries")
    if not table.probs[v]:
        raise OptimizerError(f"node {node}: no samples with label {v}")
    hits = stats.fallback_hits.setdefault(node, {})
    tau = np.asarray(tau, dtype=float)
    total = np.zeros_like(tau)
    for b, p in table.probs[v].items():
        eta, sigma = _pattern_moments(c, table, v, b, hits)
        total = total + p * Q((tau - eta) / sigma)
    return total if total.ndim else float(total)


def _mixture_spread(c, stats, node, mode, v=0):
    table = stats[node].patterns[mode]
    etas, sigmas = [], []
    for b in table.probs[v]:
        eta, sigma = _pattern_moments(c, table, v, b, None)
        etas.append(eta)
        sigmas.append(sigma)
    return float(np.mean(etas)), float(np.max(sigmas))


def threshold_for_alpha(c, stats: ConditionalStats, node: int, alpha: float,
                        mode: str = "neighborhood", v: int = 0) -> float:
    """Solve ``detection_prob(tau, v, c) = alpha`` for ``tau`` by bisection."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    center, spread = _mixture_spread(c, stats, node, mode, v)
    g = lambda t: detection_prob(t, v, c, stats, node, mode)
    step = 10.0 * spread
    lo, hi = center - step, center + step
    while g(lo) < alpha:
        step *= 2.0
        lo = center - step
    while g(hi) > alpha:
        step *= 2.0
        hi = center + step
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) > alpha:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


def closed_form_threshold(c, stats: ConditionalStats, node: int, alpha: float) -> float:
    """Single-Gaussian threshold ``Q^-1(alpha) * sigma_0 + eta_0`` of the one-hop
    fusion; scales exactly with ``c``."""
    ns = stats[node]
    c = np.asarray(c, dtype=float)
    sigma = math.sqrt(float(c @ ns.cov[0] @ c))
    return Q_inv(alpha) * sigma + float(c @ ns.mean[0])


@dataclass
class AggregateMetrics:
    R: float
    I: float
    r: np.ndarray
    q: np.ndarray
    Pf: np.ndarray
    Pd: np.ndarray


def aggregate_metrics(Pf, Pd, r, q) -> AggregateMetrics:
    """Throughput ``r . (1 - Pf)`` and interference ``q . (1 - Pd)``."""
    Pf, Pd, r, q = (np.asarray(a, dtype=float) for a in (Pf, Pd, r, q))
    if not (Pf.shape == Pd.shape == r.shape == q.shape):
        raise ValueError("Pf, Pd, r and q must have equal length")
    if np.any((Pf < 0) | (Pf > 1) | (Pd < 0) | (Pd > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    return AggregateMetrics(float(r @ (1 - Pf)), float(q @ (1 - Pd)), r, q, Pf, Pd)


@dataclass
class NetworkSolution:
    weights: FusionWeights
    alpha: np.ndarray
    deflection: np.ndarray
    fallback_nodes: list
    metrics: Optional[AggregateMetrics] = None
    rounds: int = 1
    feasible: bool = True


def _local_fallback_threshold(c, alpha):
    # standardized inputs, assumed independent under H0
    return Q_inv(alpha) * float(np.linalg.norm(c))


def optimize_network(stats: ConditionalStats, graph: FactorGraph, alpha,
                     mode: str = "decentralized", iterations: Optional[int] = 3,
                     r=None, q=None, I0: float = math.inf,
                     eps: float = CERTIFICATION_EPS, max_rounds: int = 10) -> NetworkSolution:
    """Per-node deflection-optimal fusion plus thresholds at false-alarm ``alpha``.

    Nodes whose statistics cannot support the optimization fall back to the BP
    linearization ``tanh(J / 2)`` of ``graph``'s current couplings.

    ``decentralized`` thresholds use the one-hop mixture model. ``centralized``
    thresholds use every node's label pattern and the exact linear map of
    ``iterations`` rounds (fixed point when ``None``), report aggregate metrics
    and tighten all ``alpha`` by 0.9 per round while interference exceeds ``I0``.
    """
    N = graph.node_count
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (N,)).copy()
    bound = convergence_bound(graph)
    bp_weights = FusionWeights.from_couplings(graph)
    weights = FusionWeights.zeros(graph)
    fallback, defl = [], np.full(N, np.nan)
    for j in range(N):
        try:
            c = maximize_deflection(stats, j, bound, eps)
            defl[j] = deflection(c, stats, j)
        except OptimizerError:
            c = bp_weights.node_vector(graph, j)
            fallback.append(j)
        weights = weights.with_node_vector(graph, j, c)

    if mode == "decentralized":
        tau = np.empty(N)
        for j in range(N):
            c = weights.node_vector(graph, j)
            if stats[j].counts[0] >= 2:
                tau[j] = threshold_for_alpha(c, stats, j, alpha[j], "neighborhood")
            else:
                tau[j] = _local_fallback_threshold(c, alpha[j])
        return NetworkSolution(weights.with_thresholds(tau), alpha, defl, fallback)
    if mode != "centralized":
        raise ValueError(f"unknown mode {mode!r}")

    A = (fixed_point_weights(graph, weights) if iterations is None
         else unrolled_weights(graph, weights, iterations))
    r = np.ones(N) if r is None else np.asarray(r, dtype=float)
    q = np.ones(N) if q is None else np.asarray(q, dtype=float)
    for rounds in range(1, max_rounds + 1):
        tau, Pf, Pd = np.empty(N), np.empty(N), np.empty(N)
        for j in range(N):
            a = A[:, j]
            tau[j] = threshold_for_alpha(a, stats, j, alpha[j], "full")
            Pf[j] = detection_prob(tau[j], 0, a, stats, j, "full")
            Pd[j] = detection_prob(tau[j], 1, a, stats, j, "full")
        metrics = aggregate_metrics(Pf, Pd, r, q)
        if metrics.I <= I0 or rounds == max_rounds:
            break
        alpha = alpha * 0.9
    return NetworkSolution(weights.with_thresholds(tau), alpha, defl, fallback,
                           metrics, rounds, metrics.I <= I0)
