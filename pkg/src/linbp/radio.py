"""Primary-user occupancy process and energy-detection sensing model.

Energy statistics are drawn directly as scaled chi-square variates,
``gamma_j = sigma_rx^2 * chi2_K / K``, with
``sigma_rx^2 = noise_var_j * (1 + sum of active receivable SNRs)``. Under the
vacant hypothesis this has mean ``noise_var`` and variance ``2 noise_var^2 / K``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .graph import FactorGraph, chain_graph
from .qfunc import Q_inv


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class OccupancyChain:
    """Joint Markov chain over PU state vectors.

    ``states[s]`` is the on/off vector of joint state ``s`` and
    ``transition[s]`` its next-state distribution.
    """

    pu_count: int
    states: np.ndarray
    transition: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        S = 2 ** self.pu_count
        if P.shape != (S, S):
            raise ScenarioError(f"transition matrix must be {S}x{S}, got {P.shape}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-12):
            raise ScenarioError("every transition row must be a probability distribution")

    def index(self, u) -> int:
        return int(sum(int(b) << n for n, b in enumerate(u)))

    def stationary(self) -> np.ndarray:
        w, v = np.linalg.eig(self.transition.T)
        pi = np.real(v[:, np.argmin(np.abs(w - 1.0))])
        pi = np.clip(pi / pi.sum(), 0.0, None)
        return pi / pi.sum()


def _state_table(pu_count: int) -> np.ndarray:
    s = np.arange(2 ** pu_count)
    return ((s[:, None] >> np.arange(pu_count)[None, :]) & 1).astype(np.int8)


def make_chain(transition, pu_count: Optional[int] = None) -> OccupancyChain:
    transition = np.asarray(transition, dtype=float)
    if pu_count is None:
        pu_count = int(round(math.log2(transition.shape[0])))
    return OccupancyChain(pu_count, _state_table(pu_count), transition)


def occupancy_chain(pu_count: int, p_on: float = 0.5, p_stay: float = 0.9,
                    corr: float = 0.5) -> OccupancyChain:
    """Correlated on/off chain family.

    Each PU keeps its state with probability ``p_stay`` and otherwise redraws it
    from ``Bernoulli(p_on)``. ``corr`` mixes the independent joint chain
    (``corr = 0``) with a locked chain in which all PUs redraw one common state
    (``corr = 1``); marginals stay ``Bernoulli(p_on)`` for any ``corr``.
    """
    for name, v in (("p_on", p_on), ("p_stay", p_stay), ("corr", corr)):
        if not 0.0 <= v <= 1.0:
            raise ScenarioError(f"{name} must lie in [0, 1], got {v}")
    states = _state_table(pu_count)
    S = len(states)
    single = np.array([[1 - p_on, p_on], [1 - p_on, p_on]])
    single = p_stay * np.eye(2) + (1 - p_stay) * single
    indep = np.ones((1, 1))
    # state bit n is PU n, so PU 0 is the fastest-varying Kronecker factor
    for _ in range(pu_count):
        indep = np.kron(single, indep)
    locked = p_stay * np.eye(S)
    all_off, all_on = 0, S - 1
    locked[:, all_off] += (1 - p_stay) * (1 - p_on)
    locked[:, all_on] += (1 - p_stay) * p_on
    return OccupancyChain(pu_count, states, (1 - corr) * indep + corr * locked)


def step_occupancy(state, chain: OccupancyChain, rng: np.random.Generator) -> np.ndarray:
    s = chain.index(state)
    nxt = rng.choice(len(chain.states), p=chain.transition[s])
    return chain.states[nxt].copy()


def simulate_occupancy(chain: OccupancyChain, slots: int, rng: np.random.Generator,
                       start=None) -> np.ndarray:
    """``(slots, pu_count)`` trajectory; the first row is ``start`` or a stationary draw."""
    cdf = np.cumsum(chain.transition, axis=1)
    cdf[:, -1] = 1.0
    draws = rng.random(slots)
    if start is None:
        s = int(np.searchsorted(np.cumsum(chain.stationary()), draws[0], side="right"))
        s = min(s, len(chain.states) - 1)
    else:
        s = chain.index(start)
    idx = np.empty(slots, dtype=int)
    idx[0] = s
    for t in range(1, slots):
        s = int(np.searchsorted(cdf[s], draws[t], side="right"))
        idx[t] = s
    return chain.states[idx].astype(np.int8)


@dataclass(frozen=True)
class Scenario:
    graph: FactorGraph
    snr_db: np.ndarray          # (N, P); -inf means out of range
    noise_var: np.ndarray       # (N,)
    K: int
    chain: OccupancyChain

    def __post_init__(self):
        snr = np.asarray(self.snr_db, dtype=float)
        nv = np.asarray(self.noise_var, dtype=float)
        object.__setattr__(self, "snr_db", snr)
        object.__setattr__(self, "noise_var", nv)
        N = self.graph.node_count
        if snr.shape != (N, self.chain.pu_count):
            raise ScenarioError(f"snr_db must be {N}x{self.chain.pu_count}")
        if nv.shape != (N,) or np.any(nv <= 0):
            raise ScenarioError("noise_var must be positive, one per node")
        if int(self.K) < 1:
            raise ScenarioError("K must be at least 1")
        deaf = np.flatnonzero(~self.receivable.any(axis=1))
        if deaf.size:
            warnings.warn(f"nodes {deaf.tolist()} receive no PU; their occupancy is always 0")

    @property
    def node_count(self) -> int:
        return self.graph.node_count

    @property
    def pu_count(self) -> int:
        return self.chain.pu_count

    @property
    def receivable(self) -> np.ndarray:
        return np.isfinite(self.snr_db)

    @property
    def snr(self) -> np.ndarray:
        """Linear SNR; zero where out of range."""
        return np.where(self.receivable, 10.0 ** (self.snr_db / 10.0), 0.0)

    def occupancy(self, U) -> np.ndarray:
        """Ground truth ``x``: node occupied iff a receivable PU is on."""
        U = np.asarray(U)
        return ((U @ self.receivable.T.astype(int)) > 0).astype(np.int8)

    def received_power(self, U) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        return self.noise_var * (1.0 + U @ self.snr.T)

    def with_graph(self, graph: FactorGraph) -> "Scenario":
        return Scenario(graph, self.snr_db, self.noise_var, self.K, self.chain)


@dataclass
class SlotRecord:
    u: np.ndarray
    x: np.ndarray
    gamma: np.ndarray


def sense_window(scenario: Scenario, U, rng: np.random.Generator):
    """Energy statistics and truth for a batch of PU states.

    Returns ``(gamma, x)``, both ``(T, N)``.
    """
    U = np.atleast_2d(U)
    power = scenario.received_power(U)
    gamma = power * rng.chisquare(scenario.K, size=power.shape) / scenario.K
    return gamma, scenario.occupancy(U)


def sense_slot(scenario: Scenario, u, rng: np.random.Generator) -> SlotRecord:
    u = np.asarray(u, dtype=np.int8)
    gamma, x = sense_window(scenario, u[None, :], rng)
    return SlotRecord(u=u, x=x[0], gamma=gamma[0])


def exact_llr(energy, snr: float, K: int, noise_var: float):
    """Gaussian-signal LLR of an energy statistic ``energy = ||y||^2 / K``."""
    if snr <= 0:
        raise ValueError("snr must be positive")
    if noise_var <= 0:
        raise ValueError("noise_var must be positive")
    sq = K * np.asarray(energy, dtype=float)
    return -0.5 * K * math.log1p(snr) + snr / (1.0 + snr) * sq / (2.0 * noise_var)


def tau0(noise_var, K: int, alpha: float):
    """Energy threshold giving false-alarm rate ``alpha`` (Gaussian approximation)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if K < 1:
        raise ValueError("K must be at least 1")
    return np.asarray(noise_var, dtype=float) * (1.0 + math.sqrt(2.0 / K) * Q_inv(alpha))


def standardize(gamma, noise_var, K: int):
    """Map energies to zero mean, unit variance under the vacant hypothesis."""
    nv = np.asarray(noise_var, dtype=float)
    return (np.asarray(gamma, dtype=float) / nv - 1.0) * math.sqrt(K / 2.0)


DEFAULT_SNR_DB = np.array([
    [-5.0, -np.inf],
    [-8.0, -np.inf],
    [-10.0, -10.0],
    [-np.inf, -8.0],
    [-np.inf, -5.0],
])


def default_scenario(p_on: float = 0.5, p_stay: float = 0.9, corr: float = 0.5,
                   K: int = 100, graph: Optional[FactorGraph] = None) -> Scenario:
    """Five nodes, two PUs; nodes 0-1 hear PU 0, 3-4 hear PU 1, node 2 hears both."""
    return Scenario(
        graph=graph if graph is not None else chain_graph(5),
        snr_db=DEFAULT_SNR_DB.copy(),
        noise_var=np.ones(5),
        K=K,
        chain=occupancy_chain(2, p_on, p_stay, corr),
    )
