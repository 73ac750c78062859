import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixmeasure.field import PeriodicGrid, ScalarField, random_smooth_field
from mixmeasure.maximal import (
    MaxFnParams,
    ball_averages,
    check_classical_lp_bound,
    check_l1_bound,
    check_pointwise_bound,
    l1_ratios,
    max_fn_ladder,
    sample_pairs,
    weighted_max_fn,
)


def ones(dim, n):
    g = PeriodicGrid(dim, n)
    return ScalarField(g, np.ones(g.shape))


def brute_max_fn(f, r, tau):
    # direct definition: loop over cells and radii, torus distance to every cell
    g = f.grid
    pts = g.points()
    vals = f.values.ravel()
    top = int(np.floor(r / g.h + 1e-9))
    out = np.empty(len(pts))
    # the q -> 0 limit is f(x) for tau = 0 and 0 otherwise
    for i, x in enumerate(pts):
        d = np.abs(pts - x)
        d = np.sqrt(np.sum(np.minimum(d, 1 - d) ** 2, axis=1))
        best = vals[i] if tau == 0 else 0.0
        for j in range(2, top + 1):
            inside = d <= j * g.h + 1e-12
            best = max(best, np.sum(d[inside] ** tau * vals[inside]) / inside.sum())
        out[i] = best
    return out.reshape(g.shape)


def test_params_validation():
    with pytest.raises(ValueError):
        MaxFnParams(0.0, 0.5)
    with pytest.raises(ValueError):
        MaxFnParams(0.2, 1.5)
    with pytest.raises(ValueError):
        MaxFnParams(0.01, 0.5).ladder_top(PeriodicGrid(1, 64))


def test_rejects_negative():
    g = PeriodicGrid(1, 16)
    with pytest.raises(ValueError):
        weighted_max_fn(ScalarField(g, -np.ones(16)), MaxFnParams(0.25, 0.0))


@pytest.mark.parametrize("dim,n", [(1, 32), (2, 16)])
@pytest.mark.parametrize("tau", [0.0, 0.5, 1.0])
def test_matches_brute_force(dim, n, tau):
    g = PeriodicGrid(dim, n)
    f = ScalarField(g, np.random.default_rng(dim).random(g.shape))
    r = 0.3
    np.testing.assert_allclose(weighted_max_fn(f, MaxFnParams(r, tau)).values, brute_max_fn(f, r, tau), rtol=1e-12)


def test_constant_tau_zero_exact():
    assert np.all(weighted_max_fn(ones(2, 32), MaxFnParams(0.3, 0.0)).values == 1.0)
    assert check_l1_bound(ones(1, 64), 0.0, 0.2) == 1.0


def test_constant_closed_forms():
    # average of |z|^tau over a ball of radius q is d q^tau / (tau + d)
    r = 0.25
    m1 = weighted_max_fn(ones(1, 256), MaxFnParams(r, 0.5)).values
    assert m1.max() == pytest.approx(2 / 3 * math.sqrt(r), rel=0.05)
    m2 = weighted_max_fn(ones(2, 128), MaxFnParams(0.4, 0.5)).values
    assert m2.max() == pytest.approx(4 / 5 * math.sqrt(0.4), rel=0.05)
    assert check_l1_bound(ones(1, 256), 0.5, r) == pytest.approx(2 / 3, rel=0.05)


def test_ladder_shape():
    f = ones(1, 64)
    assert ball_averages(f, MaxFnParams(0.25, 0.0)).shape == (15, 64)


def test_ladder_matches_single_radius():
    g = PeriodicGrid(2, 32)
    f = ScalarField(g, np.random.default_rng(3).random(g.shape))
    lad = max_fn_ladder(f, 0.5, [0.1, 0.2, 0.3])
    for r, M in lad.items():
        np.testing.assert_array_equal(M.values, weighted_max_fn(f, MaxFnParams(r, 0.5)).values)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 1.0), st.integers(0, 15), st.integers(0, 15))
def test_structural_properties(seed, tau, s0, s1):
    g = PeriodicGrid(2, 16)
    rng = np.random.default_rng(seed)
    a, b = rng.random(g.shape), rng.random(g.shape)
    F, G = ScalarField(g, a), ScalarField(g, a + b)
    p, big = MaxFnParams(0.25, tau), MaxFnParams(0.4, tau)
    MF, MG = weighted_max_fn(F, p).values, weighted_max_fn(G, p).values
    MB = weighted_max_fn(ScalarField(g, b), p).values
    assert np.all(MF <= MG + 1e-12)  # monotone in f
    assert np.all(MF <= weighted_max_fn(F, big).values + 1e-12)  # monotone in r
    assert np.all(MG <= MF + MB + 1e-12)  # sublinear
    shifted = weighted_max_fn(F.shifted((s0, s1)), p).values
    np.testing.assert_allclose(shifted, np.roll(MF, (s0, s1), axis=(0, 1)), rtol=1e-13)


def test_sample_pairs_distances():
    g = PeriodicGrid(2, 64)
    x, y = sample_pairs(g, 0.2, 500, 1)
    d = np.abs(x - y)
    d = np.sqrt(np.sum(np.minimum(d, 1 - d) ** 2, axis=1))
    assert d.min() >= g.h - 1e-12 and d.max() <= 0.2 + 1e-12
    x2, _ = sample_pairs(g, 0.2, 500, 1)
    np.testing.assert_array_equal(x, x2)


def test_pointwise_constant_is_zero():
    g = PeriodicGrid(2, 32)
    assert check_pointwise_bound(ScalarField(g, np.full(g.shape, 3.0)), 0.5, 0.25) == 0.0


def test_pointwise_sine_stable_under_refinement():
    vals = []
    for n in (128, 256):
        g = PeriodicGrid(1, n)
        f = ScalarField(g, np.sin(2 * np.pi * g.axis_coords()))
        vals.append(check_pointwise_bound(f, 1.0, 0.25, 2000, 0))
    assert 0 < vals[0] < math.inf
    assert vals[1] == pytest.approx(vals[0], rel=0.10)


def test_pointwise_rejects():
    f = random_smooth_field(PeriodicGrid(1, 64), 0, 4)
    with pytest.raises(ValueError):
        check_pointwise_bound(f, 0.0, 0.2)
    with pytest.raises(ValueError):
        check_pointwise_bound(f, 0.5, 0.2, samples=10)


def test_l1_zero_field_warns():
    g = PeriodicGrid(1, 32)
    with pytest.warns(UserWarning):
        assert check_l1_bound(ScalarField(g, np.zeros(32)), 0.5, 0.2) == 0.0


def test_l1_spike_weighted_bounded_classical_grows():
    # spike of one cell: classical ratio grows like log(r/h), weighted ratio tends to 1/tau
    radii = [0.05, 0.1, 0.2, 0.4]
    g = PeriodicGrid(1, 512)
    v = np.zeros(512)
    v[0] = 1.0
    f = ScalarField(g, v)
    classical = list(l1_ratios(f, 0.0, radii).values())
    weighted = list(l1_ratios(f, 0.5, radii).values())
    steps = np.diff(classical)
    assert np.all(steps > 0.6)  # about ln 2 per doubling of r
    assert max(weighted) < 2.0
    assert np.all(np.diff(np.diff(weighted)) < 0)


def test_classical_lp():
    assert check_classical_lp_bound(ones(2, 32), 2, 0.2) == 1.0
    g = PeriodicGrid(2, 32)
    v = np.zeros(g.shape)
    v[3, 4] = 1.0
    ratio = check_classical_lp_bound(ScalarField(g, v), 2, 0.1)
    assert 1.0 <= ratio < math.inf
    with pytest.raises(ValueError):
        check_classical_lp_bound(ones(1, 16), 1.0, 0.2)
