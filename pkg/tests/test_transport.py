import itertools
import math

import numpy as np
import pytest
from scipy.optimize import linprog

from mixmeasure.field import PeriodicGrid, ScalarField, make_random_binary, make_stripes
from mixmeasure.norms import hminus1
from mixmeasure.transport import (
    CostFunction,
    distance_matrix,
    dual_pairing_bound,
    exact_ot,
    kr_dual_lower_bound,
    mixing_measure,
    mixing_measure_capped,
    mkr_distance,
    mkr_result,
    plan_log_geometric_mean,
    signed_masses,
    sinkhorn_ot,
    torus_distance,
)

W1 = CostFunction.identity()


def brute_force_matching(n, k, sigma):
    """Optimal cost over all permutation couplings of a 1-d stripe pattern.

    With equal atom masses the transport polytope's vertices are permutations.
    """
    x = (np.arange(n) + 0.5) / n
    w = n // (2 * k)
    plus = [i for i in range(n) if (i // w) % 2 == 0]
    minus = [i for i in range(n) if (i // w) % 2 == 1]

    def dist(i, j):
        t = abs(x[i] - x[j])
        return min(t, 1 - t)

    best = min(sum(sigma(dist(i, j)) for i, j in zip(plus, p)) for p in itertools.permutations(minus))
    return best / len(plus)


def lp_oracle(a, b, C):
    m, n = C.shape
    A = []
    for i in range(m):
        r = np.zeros((m, n))
        r[i] = 1
        A.append(r.ravel())
    for j in range(n):
        r = np.zeros((m, n))
        r[:, j] = 1
        A.append(r.ravel())
    res = linprog(C.ravel(), A_eq=np.array(A), b_eq=np.r_[a, b], method="highs")
    return res.fun


def test_torus_distance():
    assert torus_distance(0.1, 0.9) == pytest.approx(0.2)
    assert torus_distance((0.3, 0.4), (0.3, 0.4)) == 0.0
    assert torus_distance((0.0, 0.0), (0.5, 0.5)) == pytest.approx(math.sqrt(2) / 2)
    np.testing.assert_allclose(torus_distance(np.array([[0.1], [0.2]]), np.array([[0.9], [0.2]])), [0.2, 0.0])


def test_cost_functions():
    z = np.array([0.0, 0.1, 0.5])
    assert CostFunction.logeps(0.01)(z)[0] == 0.0
    assert np.all(CostFunction.logeps(0.01)(z) >= 0)
    np.testing.assert_array_equal(W1(z), z)
    assert CostFunction.log()(z)[0] == -np.inf
    for text in ("log", "logeps:0.01", "w1", "power:0.5"):
        assert str(CostFunction.parse(text)) == text
    with pytest.raises(ValueError):
        CostFunction.parse("cubic")
    with pytest.raises(ValueError):
        CostFunction.logeps(0.0)


def test_brute_force_oracles_agree_with_lp():
    # the two independent oracles agree on the log-eps fixture instance
    e = 0.01
    sigma = lambda z: math.log(z + e) - math.log(e)
    g = PeriodicGrid(1, 8)
    a, b = signed_masses(make_stripes(g, 1))
    src, dst = np.flatnonzero(a), np.flatnonzero(b)
    C = CostFunction.logeps(e)(distance_matrix(g, src, dst))
    assert lp_oracle(a[src], b[dst], C) == pytest.approx(brute_force_matching(8, 1, sigma), rel=1e-12)


def test_exact_identity_equal_marginals():
    g = PeriodicGrid(2, 8)
    mu = np.random.default_rng(0).random(g.size)
    mu /= mu.sum()
    r = exact_ot(mu, mu, W1, g)
    assert r.cost == pytest.approx(0.0, abs=1e-15)
    assert np.all(r.plan.source == r.plan.target)


def test_exact_stripe_w1_bruteforce_n8():
    s = make_stripes(PeriodicGrid(1, 8), 1)
    assert brute_force_matching(8, 1, lambda z: z) == pytest.approx(0.25)
    assert mkr_distance(s, 0, W1) == pytest.approx(brute_force_matching(8, 1, lambda z: z), rel=1e-12)


def test_exact_stripe_w1_n64():
    r = mkr_result(make_stripes(PeriodicGrid(1, 64), 1), 0, W1)
    assert r.cost == pytest.approx(0.25, rel=0.02)
    assert r.dual_gap <= 1e-9 * (1 + abs(r.cost))


def test_exact_stripe_k2_bruteforce_n16():
    oracle = brute_force_matching(16, 2, lambda z: z)
    assert oracle == pytest.approx(0.125)
    assert mkr_distance(make_stripes(PeriodicGrid(1, 16), 2), 0, W1) == pytest.approx(oracle, rel=1e-12)
    assert mkr_distance(make_stripes(PeriodicGrid(1, 64), 2), 0, W1) == pytest.approx(1 / 8, rel=0.02)


def test_exact_logeps_fixture_n8():
    # value of the permutation brute force and the HiGHS LP oracle at n=8
    fixture = 3.126673963369061
    assert brute_force_matching(8, 1, lambda z: math.log(z + 0.01) - math.log(0.01)) == pytest.approx(fixture, rel=1e-12)
    s = make_stripes(PeriodicGrid(1, 8), 1)
    assert mkr_distance(s, 0, CostFunction.logeps(0.01)) == pytest.approx(fixture, rel=1e-10)


def test_exact_matches_lp_on_random_marginals():
    g = PeriodicGrid(2, 4)
    rng = np.random.default_rng(3)
    for _ in range(5):
        a, b = rng.random(g.size), rng.random(g.size)
        a /= a.sum()
        b /= b.sum()
        C = W1(distance_matrix(g, np.arange(g.size), np.arange(g.size)))
        assert exact_ot(a, b, W1, g).cost == pytest.approx(lp_oracle(a, b, C), abs=1e-10)


def test_plan_feasibility_and_symmetry():
    g = PeriodicGrid(2, 16)
    f = make_random_binary(g, 4, 3)
    a, b = signed_masses(f)
    for cost in (W1, CostFunction.log(), CostFunction.logeps(0.05)):
        r = exact_ot(a, b, cost, g)
        pa, pb = r.plan.marginals(g.size)
        np.testing.assert_allclose(pa, a, atol=1e-12)
        np.testing.assert_allclose(pb, b, atol=1e-12)
        assert r.plan.total() == pytest.approx(1.0, abs=1e-12)
        assert r.dual_gap <= 1e-9 * (1 + abs(r.cost))
        assert exact_ot(b, a, cost, g).cost == pytest.approx(r.cost, abs=1e-12)


def test_exact_errors():
    g = PeriodicGrid(1, 8)
    a = np.full(8, 1 / 8)
    with pytest.raises(ValueError):
        exact_ot(a, a * 1.01, W1, g)
    with pytest.raises(ValueError):
        exact_ot(a, a, CostFunction.log(), g)


def test_sinkhorn_equal_marginals():
    g = PeriodicGrid(1, 16)
    mu = np.full(16, 1 / 16)
    tol = 1e-9
    r = sinkhorn_ot(mu, mu, W1, g, reg=1e-4, tol=tol)
    assert r.cost <= 5 * tol
    assert r.dual_gap is None


def test_sinkhorn_matches_exact_stripe():
    s = make_stripes(PeriodicGrid(1, 64), 1)
    exact = mkr_distance(s, 0, W1)
    assert mkr_distance(s, 0, W1, "entropic", 1e-3) == pytest.approx(exact, rel=0.01)


def test_sinkhorn_reg_sequence_approaches_exact():
    f = make_random_binary(PeriodicGrid(2, 16), 2, 3)
    exact = mkr_distance(f, 0, W1)
    gaps = [mkr_distance(f, 0, W1, "entropic", reg) - exact for reg in (1e-1, 3e-2, 1e-2)]
    assert all(g > -1e-6 for g in gaps)
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 0.05 * exact


def test_sinkhorn_plan_marginals():
    g = PeriodicGrid(2, 8)
    f = make_random_binary(g, 1, 2)
    a, b = signed_masses(f)
    r = sinkhorn_ot(a, b, CostFunction.log(), g, reg=1e-2, tol=1e-5)
    pa, pb = r.plan.marginals(g.size)
    assert np.abs(pa - a).sum() < 1e-5
    np.testing.assert_allclose(pb, b, atol=1e-12)


def test_sinkhorn_nonconvergence_raises():
    g = PeriodicGrid(1, 32)
    a, b = signed_masses(make_stripes(g, 1))
    with pytest.raises(RuntimeError):
        sinkhorn_ot(a, b, W1, g, reg=1e-4, tol=1e-14, max_iter=20)


def test_mkr_translation_invariance_log():
    g = PeriodicGrid(2, 16)
    s = make_stripes(g, 1)
    base = mkr_distance(s, 0, CostFunction.log())
    for shift in (1, 3, 7):
        assert mkr_distance(s.shifted(shift), 0, CostFunction.log()) == pytest.approx(base, abs=1e-9)


def test_mixing_measure_scales_like_length():
    g = PeriodicGrid(1, 128)
    ratio = mixing_measure(make_stripes(g, 1)) / mixing_measure(make_stripes(g, 2))
    assert ratio == pytest.approx(2.0, rel=0.1)


def test_mixing_measure_eps_monotone_and_converges():
    s = make_stripes(PeriodicGrid(1, 64), 1)
    D0 = mixing_measure(s)
    vals = [mixing_measure(s, eps=e) for e in (1e-1, 1e-2, 1e-3)]
    assert vals[0] >= vals[1] >= vals[2] >= D0
    assert vals[2] - D0 < vals[1] - D0 < vals[0] - D0
    assert vals[2] == pytest.approx(D0, rel=0.02)


def test_mixing_measure_pure_log_needs_exact():
    with pytest.raises(ValueError):
        mixing_measure(make_stripes(PeriodicGrid(1, 16), 1), solver="entropic")


def test_jensen_chain_on_optimal_plans():
    g = PeriodicGrid(2, 16)
    for seed in range(4):
        f = make_random_binary(g, seed, 3)
        for cost in (CostFunction.log(), W1):
            geo, arith = plan_log_geometric_mean(mkr_result(f, 0, cost), g)
            assert geo <= arith * (1 + 1e-12)
        # D <= W1 follows from the chain
        assert mixing_measure(f) <= mkr_distance(f, 0, W1) * (1 + 1e-12)


def test_mixing_measure_within_twice_hminus1():
    # D <= W1(rho_+, rho_-) = 2 sup{int rho zeta : Lip <= 1} <= 2 ||rho||_{H^-1}
    g = PeriodicGrid(2, 16)
    for seed in range(4):
        f = make_random_binary(g, seed, 3)
        assert mkr_distance(f, 0, W1) <= 2 * hminus1(f)


def test_capped_measure_coarsens():
    f = make_stripes(PeriodicGrid(2, 32), 1)
    # 512 atoms per signed part; one 2x2 aggregation leaves 128
    D, factor = mixing_measure_capped(f, cap=128)
    assert factor == 2
    assert D == pytest.approx(mixing_measure(make_stripes(PeriodicGrid(2, 16), 1)), rel=1e-12)


def triangle_potential(g):
    x = g.axis_coords()
    z = np.where(x < 0.5, np.minimum(x, 0.5 - x), -np.minimum(x - 0.5, 1 - x))
    return ScalarField(g, z)


def test_kr_lower_bound_triangle_wave():
    g = PeriodicGrid(1, 64)
    s = make_stripes(g, 1)
    lb = kr_dual_lower_bound(s, triangle_potential(g))
    assert lb == pytest.approx(0.25, rel=0.02)
    assert lb <= mkr_distance(s, 0, W1) + 1e-12


def test_kr_lower_bound_constant_potential():
    g = PeriodicGrid(1, 16)
    s = make_stripes(g, 1)
    a, b = signed_masses(s)
    # a constant potential pairs to zero against rho_+ - rho_-, and has no Lipschitz scale
    assert np.full(16, 3.0) @ (a - b) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        kr_dual_lower_bound(s, ScalarField(g, np.full(16, 3.0)))
    zeta = ScalarField(g, np.linspace(0, 1, 16))
    shifted = ScalarField(g, zeta.values + 5.0)
    assert kr_dual_lower_bound(s, shifted) == pytest.approx(kr_dual_lower_bound(s, zeta), abs=1e-12)


def test_weak_duality_random():
    rng = np.random.default_rng(11)
    for trial in range(10):
        g = PeriodicGrid(rng.choice([1, 2]), int(rng.choice([8, 16])))
        a, b = rng.random(g.size), rng.random(g.size)
        a /= a.sum()
        b /= b.sum()
        zeta = ScalarField(g, rng.normal(size=g.shape))
        assert dual_pairing_bound(a, b, zeta) <= exact_ot(a, b, W1, g).cost + 1e-9
