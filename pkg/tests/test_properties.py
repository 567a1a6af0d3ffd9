import math

import numpy as np
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from linbp.blind import calibrate_threshold
from linbp.bp import BpVariant, boxplus, bp_iterate, learn_couplings
from linbp.fusion import detection_prob, maximize_deflection
from linbp.graph import build_graph, degree_stats
from linbp.linear import (
    FusionWeights, check_contraction, coefficient_from_coupling, jacobian, linear_iterate,
)
from linbp.radio import default_scenario, sense_window

from test_fusion import gaussian_stats

finite = st.floats(-50, 50, allow_nan=False)


@st.composite
def graphs(draw, max_nodes=8):
    n = draw(st.integers(1, max_nodes))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True)) if pairs else []
    return build_graph(n, chosen)


@given(finite, finite)
def test_boxplus_symmetric_and_bounded(a, b):
    s = boxplus(a, b)
    assert s == boxplus(b, a)
    assert abs(s) <= min(abs(a), abs(b)) + 1e-12


@given(st.floats(-15, 15), st.floats(-15, 15))
def test_boxplus_hyperbolic_form(a, b):
    ref = 2 * math.atanh(math.tanh(a / 2) * math.tanh(b / 2))
    assert abs(boxplus(a, b) - ref) <= 1e-10


@given(finite, finite, finite)
def test_boxplus_monotone(a, b1, b2):
    lo, hi = sorted((b1, b2))
    if a > 0:
        assert boxplus(a, lo) <= boxplus(a, hi) + 1e-12
    elif a < 0:
        assert boxplus(a, lo) >= boxplus(a, hi) - 1e-12


@given(graphs())
def test_degree_sum(g):
    assert int(g.degrees.sum()) == 2 * len(g.edges)


@given(graphs(), st.randoms())
def test_degree_stats_relabel_invariant(g, rnd):
    perm = list(range(g.node_count))
    rnd.shuffle(perm)
    assert degree_stats(g.relabel(perm)) == degree_stats(g)


@given(graphs(), st.data())
def test_coupling_lookup_symmetric(g, data):
    assume(g.edges)
    values = data.draw(st.lists(finite, min_size=len(g.edges), max_size=len(g.edges)))
    g = g.with_couplings(values)
    for i, j in g.edges:
        assert g.coupling(i, j) == g.coupling(j, i)


@given(arrays(np.int8, st.tuples(st.integers(1, 30), st.just(4)), elements=st.integers(0, 1)),
       st.randoms(), st.floats(0.1, 3))
def test_learn_couplings_order_invariant(d, rnd, zeta):
    g = build_graph(4, [(0, 1), (1, 2), (2, 3), (0, 3)])
    order = list(range(len(d)))
    rnd.shuffle(order)
    a = learn_couplings(d, zeta, g).couplings
    b = learn_couplings(d[order], zeta, g).couplings
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@given(graphs(), st.integers(1, 6), st.data())
def test_zero_coupling_bp_is_identity(g, iterations, data):
    gamma = np.array(data.draw(st.lists(finite, min_size=g.node_count, max_size=g.node_count)))
    for variant in (BpVariant.plain(), BpVariant.utrw(0.5)):
        lam, _ = bp_iterate(g, gamma, variant, iterations)
        np.testing.assert_array_equal(lam, gamma)


@given(st.floats(-40, 40))
def test_coefficient_odd_and_signed(J):
    c = coefficient_from_coupling(J)
    assert c == -coefficient_from_coupling(-J)
    assert abs(c) <= 1.0
    assert np.sign(c) == np.sign(J) or abs(J) < 1e-300


@settings(max_examples=40, deadline=None)
@given(graphs(max_nodes=7), st.integers(0, 2 ** 32 - 1))
def test_linear_iteration_contracts(g, seed):
    assume(g.edges)
    rng = np.random.default_rng(seed)
    w = FusionWeights(rng.uniform(-1, 1, 2 * len(g.edges)), np.ones(g.node_count),
                      np.zeros(g.node_count))
    _, norm, _ = check_contraction(g, w)
    assume(norm > 0)
    scale = rng.uniform(0.1, 0.95) / norm
    w = FusionWeights(w.coeffs * scale, w.self_weights, w.thresholds)
    gamma = rng.normal(size=g.node_count)
    sys_ = jacobian(g, w, gamma)
    fixed = np.linalg.solve(np.eye(len(sys_.T)) - sys_.T, sys_.xi)
    ratio = check_contraction(g, w)[1]
    start = np.max(np.abs(fixed))
    for it in (1, 3, 6):
        _, state = linear_iterate(g, w, gamma, it)
        assert np.max(np.abs(state.values - fixed)) <= ratio ** it * start + 1e-12


@given(arrays(float, 3, elements=st.floats(-3, 3)), st.floats(1e-3, 1e3))
def test_deflection_direction_scale_invariant(shift, rho):
    assume(np.any(np.abs(shift) > 1e-3))
    cov = np.array([[1.0, 0.2, 0.1], [0.2, 1.5, 0.3], [0.1, 0.3, 0.8]])
    a = maximize_deflection(gaussian_stats(np.zeros(3), shift, cov), 0, math.inf)
    # standardizing gamma by 1/sqrt(rho) scales cov by 1/rho and the shift by 1/sqrt(rho)
    b = maximize_deflection(gaussian_stats(np.zeros(3), shift / math.sqrt(rho), cov / rho), 0,
                            math.inf)
    cos = a @ b / np.linalg.norm(a) / np.linalg.norm(b)
    assert cos > 1 - 1e-9


@given(st.floats(-5, 5), st.floats(0.01, 5), st.floats(0.01, 5))
def test_detection_prob_decreasing(t1, step, sigma):
    comps = [(0.3, [0.0], [[sigma]]), (0.7, [1.0], [[1.0]])]
    stats = gaussian_stats([0.7], [2.0], [[1.0]], patterns=[comps, comps])
    assert detection_prob(t1, 0, [1.0], stats, 0) >= detection_prob(t1 + step, 0, [1.0], stats, 0)


@given(arrays(np.int8, st.integers(2, 60), elements=st.integers(0, 1)), st.data())
def test_calibration_is_generalized_inverse(ref, data):
    assume(0 < ref.mean() < 1)
    lam = np.array(data.draw(st.lists(st.floats(-10, 10), min_size=len(ref),
                                      max_size=len(ref))))
    tau = calibrate_threshold(ref, lam)
    p1 = ref.mean()
    assert tau in lam
    assert np.mean(lam > tau) <= p1 + 1e-12
    below = lam[lam < tau]
    if below.size:
        assert np.mean(lam > below.max()) > p1


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_energies_positive(seed):
    sc = default_scenario()
    rng = np.random.default_rng(seed)
    U = rng.integers(0, 2, size=(50, 2))
    gamma, _ = sense_window(sc, U, rng)
    assert np.all(gamma > 0)


@given(st.floats(-20, 10), st.floats(0, 10))
def test_mean_energy_monotone_in_snr(snr_db, bump):
    sc = default_scenario()
    table = sc.snr_db.copy()
    table[0, 0] = snr_db
    low = type(sc)(sc.graph, table, sc.noise_var, sc.K, sc.chain)
    table = table.copy()
    table[0, 0] = snr_db + bump
    high = type(sc)(sc.graph, table, sc.noise_var, sc.K, sc.chain)
    U = np.array([[1, 0], [1, 1]])
    assert np.all(high.received_power(U) >= low.received_power(U))
