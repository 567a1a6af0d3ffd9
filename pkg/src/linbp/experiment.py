"""Configuration loading and seeded Monte Carlo drivers for the sensing experiments."""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .blind import AdaptationConfig, adaptive_linear_bp, calibrate_network, local_decisions
from .bp import BpVariant, bp_iterate, learn_couplings, optimal_eap
from .fusion import CERTIFICATION_EPS, estimate_conditional_stats, optimize_network
from .graph import build_graph
from .linear import FusionWeights, check_contraction, convergence_bound, linear_iterate
from .radio import Scenario, occupancy_chain, sense_window, simulate_occupancy, standardize, tau0

METHODS = ("local", "bp", "utrw", "linear_bp_oracle", "linear_bp_blind")
THRESHOLD_MODES = ("operating", "roc")
DEFAULT_CONFIG = Path(__file__).with_name("configs") / "default.yaml"

# stream ids for RNG substreams; windows of different roles never share a stream
_TRAIN, _EVAL, _SIM = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Scenario
    seed: int
    slots: int = 20000
    methods: tuple = METHODS
    zetas: tuple = (0.2, 0.4, 0.6, 1.0)
    rho: Optional[float] = None
    alphas: tuple = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5)
    threshold_mode: str = "operating"
    iterations: int = 3
    adaptation: AdaptationConfig = AdaptationConfig()
    far_zeta: float = 1.0
    outputs: dict = field(default_factory=dict)
    occupancy: dict = field(default_factory=dict)

    @property
    def window_T(self) -> int:
        return self.adaptation.window_T

    @property
    def utrw_rho(self) -> float:
        return self.rho if self.rho is not None else optimal_eap(self.scenario.graph)


_SCHEMA = {
    "seed": None,
    "slots": None,
    "methods": None,
    "outputs": None,
    "scenario": {"K": None, "noise_var": None, "nodes": None, "edges": None, "snr_db": None,
                 "occupancy": {"p_on": None, "p_stay": None, "corr": None}},
    "training": {"window_T": None, "iterations": None, "kappa_max": None, "eta": None,
                 "zeta": None, "tau0_alpha": None, "reference_labels": None},
    "bp": {"zetas": None, "rho": None},
    "roc": {"alphas": None, "threshold_mode": None},
    "far_sweep": {"zeta": None},
}


def _check_keys(raw: dict, schema: dict, path: str, strict: bool):
    for key, val in raw.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            if strict:
                raise ConfigError(f"unknown key {where!r}")
            warnings.warn(f"ignoring unknown config key {where!r}")
            continue
        sub = schema[key]
        if isinstance(sub, dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{where}: expected a mapping")
            _check_keys(val, sub, where, strict)


def _section(raw: dict, key: str) -> dict:
    return raw.get(key) or {}


def _number(val, where: str, kind=float):
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {val!r}")
    if kind is int and int(val) != val:
        raise ConfigError(f"{where}: expected an integer, got {val!r}")
    return kind(val)


def _alphas(values, where: str) -> tuple:
    if not isinstance(values, (list, tuple)) or not values:
        raise ConfigError(f"{where}: expected a non-empty list")
    out = tuple(_number(v, f"{where}[{n}]") for n, v in enumerate(values))
    for n, a in enumerate(out):
        if not 0.0 < a < 1.0:
            raise ConfigError(f"{where}[{n}]: alpha must lie in (0, 1), got {a}")
    if any(b <= a for a, b in zip(out, out[1:])):
        raise ConfigError(f"{where}: alpha grid must be strictly increasing")
    return out


def _scenario(raw: dict) -> tuple[Scenario, dict]:
    K = _number(raw.get("K", 100), "scenario.K", int)
    snr_raw = raw.get("snr_db")
    if snr_raw is None:
        raise ConfigError("scenario.snr_db is required")
    try:
        snr = np.array([[-np.inf if v is None else float(v) for v in row] for row in snr_raw])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"scenario.snr_db: {exc}") from exc
    if snr.ndim != 2:
        raise ConfigError("scenario.snr_db must be a node-by-PU table")
    N = int(raw.get("nodes", snr.shape[0]))
    if N != snr.shape[0]:
        raise ConfigError("scenario.nodes disagrees with the snr_db table")
    edges = raw.get("edges", [[i, i + 1] for i in range(N - 1)])
    try:
        graph = build_graph(N, edges)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"scenario.edges: {exc}") from exc
    nv = raw.get("noise_var", 1.0)
    nv = np.broadcast_to(np.asarray(nv, dtype=float), (N,)).copy()
    occ = {"p_on": 0.5, "p_stay": 0.9, "corr": 0.5}
    for key, val in _section(raw, "occupancy").items():
        occ[key] = _number(val, f"scenario.occupancy.{key}")
    try:
        chain = occupancy_chain(snr.shape[1], **occ)
        scenario = Scenario(graph, snr, nv, K, chain)
    except ValueError as exc:
        raise ConfigError(f"scenario: {exc}") from exc
    return scenario, occ


def parse_config(raw: dict, strict: bool = False) -> ExperimentConfig:
    """Validate a config mapping and fill defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    _check_keys(raw, _SCHEMA, "", strict)
    if raw.get("seed") is None:
        raise ConfigError("seed is required")
    seed = _number(raw["seed"], "seed", int)
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    slots = _number(raw.get("slots", 20000), "slots", int)
    if slots < 1:
        raise ConfigError("slots must be >= 1")
    methods = tuple(raw.get("methods", METHODS))
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"methods: unknown method {m!r}")
    scenario, occ = _scenario(_section(raw, "scenario"))

    tr = _section(raw, "training")
    try:
        adaptation = AdaptationConfig(
            kappa_max=_number(tr.get("kappa_max", 4), "training.kappa_max", int),
            eta=_number(tr.get("eta", 2.0), "training.eta"),
            zeta=_number(tr.get("zeta", 1.0), "training.zeta"),
            window_T=_number(tr.get("window_T", 2000), "training.window_T", int),
            tau0_alpha=_number(tr.get("tau0_alpha", 0.1), "training.tau0_alpha"),
            iterations=_number(tr.get("iterations", 3), "training.iterations", int),
            reference_labels=tr.get("reference_labels", "initial"),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"training: {exc}") from exc
    if adaptation.window_T < 2:
        raise ConfigError("training.window_T must be >= 2")
    if adaptation.iterations < 1:
        raise ConfigError("training.iterations must be >= 1")

    bp = _section(raw, "bp")
    zetas = tuple(_number(z, "bp.zetas") for z in bp.get("zetas", (0.2, 0.4, 0.6, 1.0)))
    rho = bp.get("rho")
    if rho is not None:
        rho = _number(rho, "bp.rho")
        if not 0.0 < rho <= 1.0:
            raise ConfigError("bp.rho must lie in (0, 1]")
    roc = _section(raw, "roc")
    alphas = _alphas(roc.get("alphas", [0.05, 0.1, 0.2, 0.3, 0.4, 0.5]), "roc.alphas")
    mode = roc.get("threshold_mode", "operating")
    if mode not in THRESHOLD_MODES:
        raise ConfigError(f"roc.threshold_mode must be one of {THRESHOLD_MODES}")
    far_zeta = _number(_section(raw, "far_sweep").get("zeta", 1.0), "far_sweep.zeta")
    outputs = raw.get("outputs") or {}
    if not isinstance(outputs, dict):
        raise ConfigError("outputs must be a mapping")
    return ExperimentConfig(scenario=scenario, seed=seed, slots=slots, methods=methods,
                            zetas=zetas, rho=rho, alphas=alphas, threshold_mode=mode,
                            iterations=adaptation.iterations, adaptation=adaptation,
                            far_zeta=far_zeta, outputs=dict(outputs), occupancy=occ)


def load_config(path=None, strict: bool = False, **overrides) -> ExperimentConfig:
    """Read a YAML config (the shipped five-node scenario when ``path`` is None).

    ``overrides`` replace top-level keys, e.g. ``seed`` or ``slots``.
    """
    path = DEFAULT_CONFIG if path is None else Path(path)
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    raw = dict(raw or {})
    for key, val in overrides.items():
        if val is not None:
            raw[key] = val
    return parse_config(raw, strict=strict)


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the substream ``key`` of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def draw_window(scenario: Scenario, slots: int, rng: np.random.Generator):
    """``(U, gamma, x)`` for ``slots`` consecutive slots."""
    U = simulate_occupancy(scenario.chain, slots, rng)
    gamma, x = sense_window(scenario, U, rng)
    return U, gamma, x


def empirical_rates(decisions, x):
    """Per-node ``(far, pd)``; NaN where a hypothesis never occurs."""
    d = np.asarray(decisions, dtype=bool)
    x = np.asarray(x, dtype=bool)
    with np.errstate(invalid="ignore", divide="ignore"):
        far = (d & ~x).sum(axis=0) / (~x).sum(axis=0)
        pd = (d & x).sum(axis=0) / x.sum(axis=0)
    return far, pd


def roc_thresholds(stat, x, alpha: float) -> np.ndarray:
    """Per-node threshold whose empirical false-alarm rate on ``stat`` is ``alpha``."""
    out = np.full(stat.shape[1], np.inf)
    for j in range(stat.shape[1]):
        h0 = np.sort(stat[x[:, j] == 0, j])
        if h0.size:
            out[j] = h0[min(h0.size - 1, int(math.floor((1.0 - alpha) * h0.size)))]
    return out


@dataclass
class MethodRun:
    """A trained detector: decision statistic on the evaluation window plus its
    operating-point threshold."""

    name: str
    stat: np.ndarray
    threshold: np.ndarray
    fallback: bool = False
    strict_gt: bool = False


def _bp_method(name, scenario, train, evaluate, alpha, zeta, variant, iterations):
    t0 = tau0(scenario.noise_var, scenario.K, alpha)
    graph = learn_couplings(local_decisions(train, scenario.noise_var, scenario.K, alpha),
                            zeta, scenario.graph)
    lam, _ = bp_iterate(graph, evaluate - t0, variant, iterations)
    return MethodRun(name, lam, np.zeros(scenario.node_count))


def _oracle_method(scenario, train, x_train, evaluate, alpha, iterations):
    g = standardize(train, scenario.noise_var, scenario.K)
    stats = estimate_conditional_stats(g, x_train, scenario.graph)
    sol = optimize_network(stats, scenario.graph, alpha, mode="centralized",
                           iterations=iterations)
    lam, _ = linear_iterate(scenario.graph, sol.weights,
                            standardize(evaluate, scenario.noise_var, scenario.K), iterations)
    return MethodRun("linear_bp_oracle", lam, sol.weights.thresholds,
                     fallback=bool(sol.fallback_nodes))


def blind_weights(scenario: Scenario, train, adaptation: AdaptationConfig):
    return adaptive_linear_bp(train, scenario.noise_var, scenario.K, scenario.graph, adaptation)


def _blind_method(scenario, train, evaluate, alpha, adaptation):
    res = blind_weights(scenario, train, adaptation)
    it = adaptation.iterations
    lam_train, _ = linear_iterate(scenario.graph, res.weights,
                                  standardize(train, scenario.noise_var, scenario.K), it)
    ref = local_decisions(train, scenario.noise_var, scenario.K, alpha)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        tau = calibrate_network(ref, lam_train)
    lam, _ = linear_iterate(scenario.graph, res.weights,
                            standardize(evaluate, scenario.noise_var, scenario.K), it)
    degenerate = bool(res.fallback_nodes) or bool(caught)
    # the calibrated threshold is a strict-exceedance rule
    return MethodRun("linear_bp_blind", lam, tau, fallback=degenerate, strict_gt=True)


def train_methods(config: ExperimentConfig, alpha: float, train, x_train, evaluate,
                  methods=None) -> list:
    sc = config.scenario
    methods = config.methods if methods is None else methods
    runs = []
    for method in methods:
        if method == "local":
            runs.append(MethodRun("local", evaluate, np.broadcast_to(
                tau0(sc.noise_var, sc.K, alpha), (sc.node_count,)).copy()))
        elif method in ("bp", "utrw"):
            variant = (BpVariant.plain() if method == "bp"
                       else BpVariant.utrw(config.utrw_rho))
            for z in config.zetas:
                runs.append(_bp_method(f"{method}_zeta{z:g}", sc, train, evaluate, alpha, z,
                                       variant, config.iterations))
        elif method == "linear_bp_oracle":
            runs.append(_oracle_method(sc, train, x_train, evaluate, alpha, config.iterations))
        elif method == "linear_bp_blind":
            runs.append(_blind_method(sc, train, evaluate, alpha, config.adaptation))
        else:
            raise ValueError(f"unknown method {method!r}")
    return runs


def _decide(run: MethodRun, threshold):
    return run.stat > threshold if run.strict_gt else run.stat >= threshold


def run_roc(config: ExperimentConfig, methods=None) -> list[dict]:
    """Per (alpha, method, node) false-alarm and detection rates.

    Each alpha gets its own training and evaluation windows. In ``operating``
    mode every method uses its own threshold rule at ``alpha``; in ``roc`` mode
    every decision statistic is thresholded at its empirical ``1 - alpha`` H0
    quantile on the evaluation window.
    """
    sc = config.scenario
    rows = []
    for a_idx, alpha in enumerate(config.alphas):
        _, train, x_train = draw_window(sc, config.window_T, stream(config.seed, a_idx, _TRAIN))
        _, evaluate, x_eval = draw_window(sc, config.slots, stream(config.seed, a_idx, _EVAL))
        for run in train_methods(config, alpha, train, x_train, evaluate, methods):
            if config.threshold_mode == "roc":
                dec = run.stat > roc_thresholds(run.stat, x_eval, alpha)
            else:
                dec = _decide(run, run.threshold)
            far, pd = empirical_rates(dec, x_eval)
            for j in range(sc.node_count):
                rows.append({"method": run.name, "node": j + 1, "alpha": alpha,
                             "far": far[j], "pd": pd[j], "slots": config.slots,
                             "seed": config.seed, "fallback": int(run.fallback)})
    return rows


def run_far_sweep(config: ExperimentConfig) -> list[dict]:
    """False-alarm rates of tau0-thresholded BP and calibrated blind linear BP."""
    sc = config.scenario
    rows = []
    for a_idx, alpha in enumerate(config.alphas):
        _, train, x_train = draw_window(sc, config.window_T, stream(config.seed, a_idx, _TRAIN))
        _, evaluate, x_eval = draw_window(sc, config.slots, stream(config.seed, a_idx, _EVAL))
        bp = _bp_method("bp_tau0", sc, train, evaluate, alpha, config.far_zeta,
                        BpVariant.plain(), config.iterations)
        cal = _blind_method(sc, train, evaluate, alpha, config.adaptation)
        cal.name = "linear_bp_calibrated"
        for run in (bp, cal):
            far, _ = empirical_rates(_decide(run, run.threshold), x_eval)
            for j in range(sc.node_count):
                rows.append({"method": run.name, "node": j + 1, "alpha": alpha,
                             "far": far[j], "slots": config.slots, "seed": config.seed,
                             "fallback": int(run.fallback)})
    return rows


def far_band(alpha: float, slots: int) -> float:
    """``alpha`` plus three binomial standard deviations over ``slots``."""
    return alpha + 3.0 * math.sqrt(alpha * (1.0 - alpha) / slots)


def far_violations(rows: list[dict], method: str = "linear_bp_calibrated") -> list[dict]:
    return [r for r in rows if r["method"] == method
            and not r["far"] <= far_band(r["alpha"], r["slots"])]


def convergence_report(graph, weights: FusionWeights, eps: float = CERTIFICATION_EPS) -> dict:
    """Per-node and global contraction certificates of a weight set."""
    certified, norm, radius = check_contraction(graph, weights)
    bound = convergence_bound(graph)
    limit = (1.0 - eps) * bound
    nodes = []
    coeffs = weights.effective
    for j in range(graph.node_count):
        row = [abs(coeffs[graph.directed_index(k, j)]) for k in graph.neighbors(j)]
        peak = max(row, default=0.0)
        nodes.append({
            "node": j + 1,
            "max_abs_coeff": peak,
            "margin": _finite(limit - peak),
            "certified": bool(peak < bound),
        })
    return {"bound": _finite(limit), "norm_inf": norm, "spectral_radius": radius,
            "certified": bool(certified), "nodes": nodes}


def _finite(v):
    return None if v is None or not math.isfinite(v) else float(v)


def validate_convergence(config: ExperimentConfig) -> dict:
    """Train blind and oracle weights on a fresh window and certify both."""
    sc = config.scenario
    _, train, x_train = draw_window(sc, config.window_T, stream(config.seed, 0, _TRAIN))
    report = {"seed": config.seed, "window_T": config.window_T}
    if "linear_bp_blind" in config.methods:
        res = blind_weights(sc, train, config.adaptation)
        report["linear_bp_blind"] = convergence_report(sc.graph, res.weights)
    if "linear_bp_oracle" in config.methods:
        stats = estimate_conditional_stats(standardize(train, sc.noise_var, sc.K),
                                           x_train, sc.graph)
        sol = optimize_network(stats, sc.graph, config.adaptation.tau0_alpha,
                               mode="decentralized")
        report["linear_bp_oracle"] = convergence_report(sc.graph, sol.weights)
    return report


def learn_report(config: ExperimentConfig) -> dict:
    """Blind adaptation on a fresh window, with per-pass label quality."""
    sc = config.scenario
    _, train, x_train = draw_window(sc, config.window_T, stream(config.seed, 0, _TRAIN))
    res = blind_weights(sc, train, config.adaptation)
    passes = []
    for kappa, labels in enumerate(res.label_history):
        far, pd = empirical_rates(labels, x_train)
        passes.append({"kappa": kappa, "far": _floats(far), "pd": _floats(pd)})
    g = sc.graph
    coeffs = []
    for j in range(g.node_count):
        for k in g.closed_neighborhood(j):
            if k == j:
                learned, emitted, ref = res.learned_self[j], res.weights.self_weights[j], 1.0
            else:
                d = g.directed_index(k, j)
                learned, emitted = res.learned[d], res.weights.coeffs[d]
                ref = res.reference.coeffs[d]
            coeffs.append({"node": j + 1, "member": k + 1, "learned": float(learned),
                           "reference": float(ref), "emitted": float(emitted),
                           "fallback": bool(res.fallback[(j, k)])})
    return {"seed": config.seed, "window_T": config.window_T,
            "kappa_max": config.adaptation.kappa_max, "eta": _finite(config.adaptation.eta),
            "zeta": config.adaptation.zeta, "passes": passes, "coefficients": coeffs,
            "edges": [[i + 1, j + 1] for i, j in g.edges],
            "couplings": [float(J) for J in res.graph.couplings]}


def calibrate_report(config: ExperimentConfig) -> dict:
    """Blind weights plus calibrated thresholds for every alpha in the grid."""
    sc = config.scenario
    _, train, _ = draw_window(sc, config.window_T, stream(config.seed, 0, _TRAIN))
    res = blind_weights(sc, train, config.adaptation)
    lam, _ = linear_iterate(sc.graph, res.weights, standardize(train, sc.noise_var, sc.K),
                            config.iterations)
    out = []
    for alpha in config.alphas:
        ref = local_decisions(train, sc.noise_var, sc.K, alpha)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            tau = calibrate_network(ref, lam)
        out.append({"alpha": alpha, "thresholds": [_finite(t) for t in tau],
                    "reference_rate": _floats(ref.mean(axis=0))})
    return {"seed": config.seed, "window_T": config.window_T,
            "coeffs": _floats(res.weights.coeffs),
            "self_weights": _floats(res.weights.self_weights), "calibration": out}


def simulate_rows(config: ExperimentConfig) -> list[dict]:
    sc = config.scenario
    U, gamma, x = draw_window(sc, config.slots, stream(config.seed, 0, _SIM))
    rows = []
    for t in range(config.slots):
        row = {"slot": t}
        row.update({f"u{n + 1}": int(U[t, n]) for n in range(sc.pu_count)})
        row.update({f"x{j + 1}": int(x[t, j]) for j in range(sc.node_count)})
        row.update({f"gamma{j + 1}": float(gamma[t, j]) for j in range(sc.node_count)})
        row["seed"] = config.seed
        rows.append(row)
    return rows


def _floats(a):
    return [_finite(float(v)) for v in np.asarray(a, dtype=float)]


def _cell(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else ""
    if isinstance(v, np.integer):
        return int(v)
    return v


def to_csv(rows: list[dict]) -> str:
    """RFC-4180 CSV with a header row; non-finite values are empty cells."""
    buf = io.StringIO(newline="")
    if not rows:
        return ""
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\r\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _cell(v) for k, v in row.items()})
    return buf.getvalue()


def to_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"
