"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL verdict that is printed in the
terminal summary. Criteria the model cannot meet are marked strict xfail: the
check runs as stated and must keep failing.
"""

import dataclasses
import math
import subprocess
import sys

import mpmath
import numpy as np
import pytest

from linbp import experiment as ex
from linbp.blind import AdaptationConfig, adaptive_linear_bp, local_decisions
from linbp.bp import boxplus, learn_couplings
from linbp.fusion import (
    closed_form_threshold, deflection, estimate_conditional_stats, maximize_deflection,
    optimize_network,
)
from linbp.graph import build_graph
from linbp.linear import (
    DivergenceError, FusionWeights, check_contraction, coefficient_from_coupling,
    convergence_bound, jacobian, linear_iterate, scale_weights,
)
from linbp.radio import standardize

from conftest import ACCEPTANCE, window
from test_fusion import gaussian_stats

mpmath.mp.dps = 50


def verdict(n, checks: dict, detail: str = ""):
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    text = detail if ok else f"failed: {', '.join(failed)}; {detail}"
    ACCEPTANCE.append((n, ok, text))
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {text}")
    assert ok, text


def random_graph(rng, n, p):
    while True:
        edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
        if edges:
            return build_graph(n, edges)


def random_tree(rng, n):
    return build_graph(n, [(int(rng.integers(0, k)), k) for k in range(1, n)])


def diameter(g):
    far = 0
    for s in range(g.node_count):
        dist = {s: 0}
        frontier = [s]
        while frontier:
            nxt = []
            for u in frontier:
                for v in g.neighbors(u):
                    if v not in dist:
                        dist[v] = dist[u] + 1
                        nxt.append(v)
            frontier = nxt
        far = max(far, max(dist.values()))
    return far


def fixed_point_messages(g, w, gamma):
    sys_ = jacobian(g, w, gamma)
    return np.linalg.solve(np.eye(len(sys_.T)) - sys_.T, sys_.xi)


def certified_weights(rng, g):
    b = (1 - 1e-6) * convergence_bound(g)
    b = 1.0 if not math.isfinite(b) else b
    return FusionWeights(rng.uniform(-b, b, 2 * len(g.edges)), np.ones(g.node_count),
                         np.zeros(g.node_count))


@pytest.fixture(scope="module")
def cfg():
    return ex.load_config()


def test_criterion_01_boxplus_identities():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(-20, 20, (2, 10_000))
    s = boxplus(a, b)
    # the float atanh form loses ~1e-8 near |a|, |b| = 20, so the reference is
    # the same identity evaluated at 50 digits
    ref = np.array([float(2 * mpmath.atanh(mpmath.tanh(mpmath.mpf(x) / 2)
                                           * mpmath.tanh(mpmath.mpf(y) / 2)))
                    for x, y in zip(a, b)])
    err = np.abs(s - ref).max()
    verdict(1, {
        "symmetry": np.abs(s - boxplus(b, a)).max() <= 1e-10,
        "zero": np.abs(boxplus(a, 0.0)).max() <= 1e-10,
        "bound": np.all(np.abs(s) <= np.minimum(np.abs(a), np.abs(b)) + 1e-10),
        "tanh identity": err <= 1e-10,
    }, f"max identity error {err:.2e} over 10^4 pairs")


def test_criterion_02_coefficient_map():
    J = np.random.default_rng(2).uniform(-10, 10, 1000)
    err = np.abs(coefficient_from_coupling(J) - np.tanh(J / 2)).max()
    c1 = coefficient_from_coupling(1.0)
    verdict(2, {"tanh form": err <= 1e-12, "J=1": abs(c1 - 0.46212) <= 5e-6},
            f"max error {err:.1e}, c(1) = {c1:.6f}")


def test_criterion_03_linearization():
    worst_ratio, worst_deriv = 0.0, 0.0
    for J in np.linspace(-3, 3, 61):
        c = coefficient_from_coupling(J)
        bs = np.linspace(-0.5, 0.5, 101)
        bs = bs[bs != 0]
        worst_ratio = max(worst_ratio, np.max(np.abs(boxplus(J, bs) - c * bs) / bs ** 2))
        h = 1e-4
        worst_deriv = max(worst_deriv, abs((boxplus(J, h) - boxplus(J, -h)) / (2 * h) - c))
    verdict(3, {"remainder <= 2 b^2": worst_ratio <= 2.0, "derivative": worst_deriv <= 1e-6},
            f"max |S - c b| / b^2 = {worst_ratio:.3f}, derivative error {worst_deriv:.1e}")


def test_criterion_04_fixed_point_oracle():
    rng = np.random.default_rng(4)
    loopy, tree = 0.0, 0.0
    for _ in range(50):
        g = random_graph(rng, 10, 0.3)
        w = certified_weights(rng, g)
        assert check_contraction(g, w)[0]
        gamma = rng.normal(size=10)
        _, state = linear_iterate(g, w, gamma, 100)
        loopy = max(loopy, np.abs(state.values - fixed_point_messages(g, w, gamma)).max())
    for _ in range(50):
        g = random_tree(rng, 10)
        w = certified_weights(rng, g)
        gamma = rng.normal(size=10)
        _, state = linear_iterate(g, w, gamma, diameter(g))
        tree = max(tree, np.abs(state.values - fixed_point_messages(g, w, gamma)).max())
    verdict(4, {"loopy graphs": loopy <= 1e-8, "trees": tree <= 1e-10},
            f"max error {loopy:.1e} (100 iterations), {tree:.1e} (trees, diameter iterations)")


@pytest.mark.xfail(strict=True, reason="a star is a tree: its message map is nilpotent and "
                   "cannot diverge")
def test_criterion_05_contraction():
    rng = np.random.default_rng(5)
    iff = True
    for _ in range(200):
        g = random_graph(rng, 6, 0.5)
        w = FusionWeights(rng.uniform(-0.9, 0.9, 2 * len(g.edges)), np.ones(6), np.zeros(6))
        ok, norm, _ = check_contraction(g, w)
        iff &= ok == (norm < 1.0)
    g = build_graph(3, [(0, 1), (1, 2)])
    edge_ok = not check_contraction(g, FusionWeights.uniform(g, 1.0))[0]
    star = build_graph(4, [(0, 1), (0, 2), (0, 3)])
    w = FusionWeights.uniform(star, 0.6)
    ok, norm, radius = check_contraction(star, w)
    try:
        linear_iterate(star, w, np.ones(4), 200)
        diverged = False
    except DivergenceError:
        diverged = True
    verdict(5, {"certified iff norm < 1": iff and edge_ok, "star rejected": not ok,
                "star diverges": diverged},
            f"star norm {norm:.2f}, spectral radius {radius:.2f}")


def test_criterion_06_threshold_accuracy(scenario):
    gamma, x = window(scenario, 20000, 6)
    g = standardize(gamma, scenario.noise_var, scenario.K)
    stats = estimate_conditional_stats(g, x, scenario.graph)
    sol = optimize_network(stats, scenario.graph, 0.1, mode="centralized", iterations=3)
    lam, _ = linear_iterate(scenario.graph, sol.weights, g, 3)
    alarms = lam >= sol.weights.thresholds
    far = np.array([alarms[x[:, j] == 0, j].mean() for j in range(scenario.node_count)])
    verdict(6, {"far in [0.09, 0.11]": np.all((far >= 0.09) & (far <= 0.11))},
            f"per-node FAR {np.round(far, 4).tolist()}")


@pytest.mark.xfail(strict=True, reason="tau0-thresholded BP stays below alpha at 0.3 in "
                   "this scenario")
def test_criterion_07_calibration_guarantee(cfg):
    rows = ex.run_far_sweep(cfg)
    calibrated = [r for r in rows if r["method"] == "linear_bp_calibrated"]
    worst = max(r["far"] - ex.far_band(r["alpha"], r["slots"]) for r in calibrated)
    bp = [r for r in rows if r["method"] == "bp_tau0" and r["alpha"] == 0.3]
    bp_far = [round(float(r["far"]), 4) for r in bp]
    verdict(7, {
        "calibrated within band": not ex.far_violations(rows),
        "bp_tau0 violates at 0.3": any(r["far"] > ex.far_band(0.3, r["slots"]) for r in bp),
    }, f"calibrated worst margin {worst:+.4f}; bp_tau0 FAR at 0.3 {bp_far} "
       f"vs band {ex.far_band(0.3, cfg.slots):.4f}")


def test_criterion_08_cooperative_gain(cfg):
    c = dataclasses.replace(cfg, threshold_mode="roc", alphas=(0.1,),
                            methods=("local", "bp", "linear_bp_blind"), zetas=(0.2, 0.4, 1.0))
    pd = {}
    for r in ex.run_roc(c):
        pd.setdefault(r["method"], np.zeros(5))[r["node"] - 1] = r["pd"]
    blind, local = pd["linear_bp_blind"], pd["local"]
    best_bp = np.max([pd[f"bp_zeta{z:g}"] for z in (0.2, 0.4, 1.0)], axis=0)
    gain = blind - local
    verdict(8, {
        "blind >= local": np.all(blind >= local),
        "gain >= 0.05 at node 2 or 3": max(gain[1], gain[2]) >= 0.05,
        "blind >= bp - 0.02": np.all(blind >= best_bp - 0.02),
    }, f"gain over local {np.round(gain, 3).tolist()}, "
       f"vs best BP {np.round(blind - best_bp, 3).tolist()}")


def test_criterion_09_scale_invariance(scenario):
    gtr, _ = window(scenario, 2000, 9)
    gev, _ = window(scenario, 20000, 90)
    res = adaptive_linear_bp(gtr, scenario.noise_var, scenario.K, scenario.graph)
    z_tr = standardize(gtr, scenario.noise_var, scenario.K)
    z_ev = standardize(gev, scenario.noise_var, scenario.K)
    stats = estimate_conditional_stats(z_tr, res.label_history[-1], scenario.graph)

    def decisions(w):
        tau = [closed_form_threshold(w.node_vector(scenario.graph, j), stats, j, 0.1)
               for j in range(scenario.node_count)]
        lam, _ = linear_iterate(scenario.graph, w, z_ev, 1)
        return lam >= np.array(tau)

    base = decisions(res.weights)
    scaled = decisions(scale_weights(res.weights, 0.3125))
    flips = int(np.sum(base != scaled))
    verdict(9, {"identical decisions": np.array_equal(base, scaled)},
            f"{flips} flips over {base.size} node-slots")


def test_criterion_10_deflection_vs_grid():
    rng = np.random.default_rng(10)
    grid = np.arange(-100, 101) / 100
    worst = -np.inf
    for _ in range(100):
        L = rng.normal(size=(3, 3))
        cov = L @ L.T + 0.1 * np.eye(3)
        shift = rng.normal(size=3)
        bound = rng.uniform(0.2, 1.0)
        st = gaussian_stats(np.zeros(3), shift, cov)
        c = maximize_deflection(st, 0, bound)
        a, b = np.meshgrid(grid * bound, grid * bound)
        C = np.stack([np.ones(a.size), a.ravel(), b.ravel()], axis=1)
        var = np.einsum("ij,jk,ik->i", C, cov, C)
        best = np.max(C @ shift / np.sqrt(var))
        worst = max(worst, best - deflection(c, st, 0))
    verdict(10, {"closed form >= grid - 1e-3": worst <= 1e-3},
            f"largest grid advantage {worst:.2e} over 100 instances")


def test_criterion_11_fallback_exactness(scenario):
    gtr, _ = window(scenario, 2000, 11)
    labels = local_decisions(gtr, scenario.noise_var, scenario.K, 0.1)
    J = learn_couplings(labels, 1.0, scenario.graph).directed_couplings()
    run = lambda eta: adaptive_linear_bp(gtr, scenario.noise_var, scenario.K, scenario.graph,
                                         AdaptationConfig(eta=eta))
    pure, kept = run(math.inf), run(0.0)
    verdict(11, {
        "eta=inf is BP": np.array_equal(pure.weights.coeffs, coefficient_from_coupling(J))
        and np.all(pure.weights.self_weights == 1.0),
        "eta=0 is learned": np.array_equal(kept.weights.coeffs, kept.learned)
        and np.array_equal(kept.weights.self_weights, kept.learned_self),
    }, "bit-for-bit comparison of emitted coefficients")


def test_criterion_12_cli_determinism(tmp_path):
    outs = []
    for n in range(2):
        target = tmp_path / f"roc{n}.csv"
        subprocess.run([sys.executable, "-m", "linbp.cli", "roc", "--seed", "42",
                        "--out", str(target)], check=True)
        outs.append(target.read_bytes())
    rows = len(outs[0].splitlines()) - 1
    verdict(12, {"byte-identical": outs[0] == outs[1] and rows > 0},
            f"{len(outs[0])} bytes, {rows} rows")
