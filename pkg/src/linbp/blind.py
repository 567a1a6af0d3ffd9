"""Blind weight learning by offline adaptive linear BP, and detector calibration."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bp import learn_couplings
from .fusion import estimate_conditional_stats, optimize_network
from .graph import FactorGraph
from .linear import FusionWeights, linear_iterate
from .radio import standardize, tau0

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdaptationConfig:
    kappa_max: int = 4
    eta: float = 2.0
    zeta: float = 1.0
    window_T: int = 2000
    tau0_alpha: float = 0.1
    iterations: int = 3
    normalize: bool = True
    early_stop: bool = False
    # labels the c^BP reference couplings are learned from: the local tau0
    # decisions the main BP is trained on ("initial"), or the last offline pass
    reference_labels: str = "initial"

    def __post_init__(self):
        if self.kappa_max < 1:
            raise ValueError("kappa_max must be >= 1")
        if not self.eta >= 0:
            raise ValueError("eta must be non-negative")
        if not self.zeta > 0:
            raise ValueError("zeta must be positive")
        if not 0.0 < self.tau0_alpha < 1.0:
            raise ValueError("tau0_alpha must lie in (0, 1)")
        if self.reference_labels not in ("initial", "final"):
            raise ValueError("reference_labels must be 'initial' or 'final'")


@dataclass
class AdaptationResult:
    weights: FusionWeights
    learned: np.ndarray          # c^(kappa_max), directed-edge layout
    learned_self: np.ndarray
    reference: FusionWeights     # BP linearization c^BP
    graph: FactorGraph           # couplings behind the c^BP reference
    fallback: dict               # (node, member) -> True if c^BP was emitted
    label_history: list = field(default_factory=list)
    window_thresholds: Optional[np.ndarray] = None
    fallback_nodes: list = field(default_factory=list)


def prepare_inputs(gamma, noise_var, K: int, normalize: bool = True):
    """Standardized energies, or the raw energies when ``normalize`` is off."""
    return standardize(gamma, noise_var, K) if normalize else np.asarray(gamma, dtype=float)


def local_decisions(gamma, noise_var, K: int, alpha: float) -> np.ndarray:
    """Energy detection against ``tau0``, one column per node."""
    return (np.asarray(gamma) > tau0(noise_var, K, alpha)).astype(np.int8)


def _use_reference(c_bp: float, c_learned: float, eta: float) -> bool:
    """Fallback test for one coefficient.

    ``eta`` weighs the reference against the learned value: the reference wins
    when ``c_bp / c_learned > 1 / eta``. Mixed signs or a zero learned value
    count as an infinite ratio. ``eta = inf`` always picks the reference and
    ``eta = 0`` never does.
    """
    if math.isinf(eta):
        return True
    if eta == 0.0:
        return False
    if c_learned == 0.0:
        return c_bp != 0.0
    ratio = c_bp / c_learned
    if ratio < 0:
        return True
    return ratio > 1.0 / eta


def adaptive_linear_bp(gamma_window, noise_var, K: int, graph: FactorGraph,
                       config: AdaptationConfig = AdaptationConfig()) -> AdaptationResult:
    """Learn linear-BP fusion weights from an unlabeled window of energies.

    Labels start from local energy detection at ``tau0``. Each pass estimates
    label-conditioned statistics, re-optimizes every node's fusion vector and
    threshold, and relabels the window with the resulting linear BP. The loop
    runs for ``kappa = 0 .. kappa_max``. Finally each coefficient is replaced by
    its BP linearization whenever ``c_BP / c_learned > 1 / eta`` (or the signs
    disagree).
    """
    gamma_window = np.asarray(gamma_window, dtype=float)
    g = prepare_inputs(gamma_window, noise_var, K, config.normalize)
    labels = local_decisions(gamma_window, noise_var, K, config.tau0_alpha)
    history = [labels]
    initial_ref = learn_couplings(labels, config.zeta, graph)
    prev = None
    sol = None
    stats_labels = labels
    for kappa in range(config.kappa_max + 1):
        stats_labels = labels
        stats = estimate_conditional_stats(g, labels, graph)
        if config.reference_labels == "initial":
            current = initial_ref
        else:
            current = learn_couplings(labels, config.zeta, graph)
        sol = optimize_network(stats, current, config.tau0_alpha, mode="decentralized")
        lam, _ = linear_iterate(graph, sol.weights, g, config.iterations)
        labels = (lam >= sol.weights.thresholds).astype(np.int8)
        history.append(labels)
        log.debug("kappa=%d occupancy rate %s", kappa, labels.mean(axis=0).round(3))
        vec = np.concatenate([sol.weights.coeffs, sol.weights.self_weights])
        if config.early_stop and prev is not None and np.max(np.abs(vec - prev)) < 1e-4:
            break
        prev = vec

    learned_graph = current
    ref = FusionWeights.from_couplings(learned_graph)
    out = FusionWeights.zeros(graph)
    fallback = {}
    for j in range(graph.node_count):
        c_k = sol.weights.node_vector(graph, j)
        c_bp = ref.node_vector(graph, j)
        # nodes the optimizer could not serve already carry c^BP
        forced = j in sol.fallback_nodes
        chosen = np.empty_like(c_k)
        for idx, k in enumerate(graph.closed_neighborhood(j)):
            use = _use_reference(c_bp[idx], c_k[idx], config.eta)
            fallback[(j, k)] = use or forced
            chosen[idx] = c_bp[idx] if use else c_k[idx]
        out = out.with_node_vector(graph, j, chosen)
    return AdaptationResult(
        weights=out,
        learned=np.asarray(sol.weights.coeffs, dtype=float),
        learned_self=np.asarray(sol.weights.self_weights, dtype=float),
        reference=ref,
        graph=learned_graph,
        fallback=fallback,
        label_history=history,
        window_thresholds=np.asarray(sol.weights.thresholds, dtype=float),
        fallback_nodes=list(sol.fallback_nodes),
    )


def calibrate_threshold(reference_decisions, lambda_samples) -> float:
    """Threshold matching the reference detector's alarm rate.

    Returns the smallest sample ``tau`` whose empirical exceedance
    ``mean(lambda > tau)`` does not exceed the reference rate. A reference that
    never (always) fires yields ``+inf`` (``-inf``).
    """
    ref = np.asarray(reference_decisions).reshape(-1)
    lam = np.asarray(lambda_samples, dtype=float).reshape(-1)
    if ref.size == 0 or lam.size == 0:
        raise ValueError("calibration needs non-empty inputs")
    if ref.size != lam.size:
        raise ValueError("reference decisions and samples must cover the same slots")
    p1 = float(np.mean(ref))
    if p1 <= 0.0:
        warnings.warn("reference detector never fired; calibrated detector will never alarm")
        return math.inf
    if p1 >= 1.0:
        warnings.warn("reference detector always fired; calibrated detector will always alarm")
        return -math.inf
    s = np.sort(lam)
    T = s.size
    exceed = T - np.searchsorted(s, s, side="right")
    ok = np.flatnonzero(exceed <= p1 * T + 1e-9)
    return float(s[ok[0]])


def calibrate_network(reference_decisions, lam) -> np.ndarray:
    ref = np.asarray(reference_decisions)
    lam = np.asarray(lam, dtype=float)
    return np.array([calibrate_threshold(ref[:, j], lam[:, j]) for j in range(lam.shape[1])])
