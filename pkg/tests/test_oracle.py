import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from sdot.oracle import PiecewiseCdf, exact_lp_small, w1_exact_1d, wp_exact_1d


def grid(N):
    return (np.arange(N) + 0.5) / N


def test_w1_examples():
    F = PiecewiseCdf.discrete([0.2, 0.5], [0.4, 0.6])
    assert w1_exact_1d(F, F) == 0.0
    assert w1_exact_1d(PiecewiseCdf.discrete([0.0]), PiecewiseCdf.discrete([1.0])) == 1.0
    for N in (1, 3, 10, 37):
        # each cell contributes int |x - centre| dx = 1 / (4 N^2)
        assert w1_exact_1d(PiecewiseCdf.discrete(grid(N)), PiecewiseCdf.uniform(0, 1)) == \
            pytest.approx(1 / (4 * N), rel=1e-12)


def test_cdf_validation():
    with pytest.raises(ValueError):
        PiecewiseCdf(np.array([0.0, 1.0]), np.array([0.5, 0.2]), np.array([0.0, 0.0]))
    with pytest.raises(ValueError):
        PiecewiseCdf(np.array([0.0, 1.0]), np.array([0.0, 0.9]), np.array([0.0, 0.0]))


def test_wp_examples():
    assert wp_exact_1d([0.3, 0.7], [0.5, 0.5], np.array([0.3, 0.7]), 2) == 0.0
    for p in (1, 1.5, 2, 3):
        assert wp_exact_1d([0.0], [1.0], np.array([1.0]), p) == pytest.approx(1.0, rel=1e-14)
    # W2^2 between {-1, 1} and U(-1, 1): 2 * int_0^1 (1 - y)^2 dy / 2 = 1/3
    w2 = wp_exact_1d([-1.0, 1.0], [0.5, 0.5], ("uniform", -1.0, 1.0), 2)
    assert w2**2 == pytest.approx(1 / 3, rel=1e-13)
    with pytest.raises(ValueError):
        wp_exact_1d([0.0], [1.0], np.array([1.0]), 0.5)


def test_wp_p1_matches_cdf_integral():
    gen = np.random.default_rng(2)
    for _ in range(30):
        x = np.sort(gen.normal(size=4))
        w = gen.dirichlet(np.ones(4))
        y = gen.normal(size=7)
        a = wp_exact_1d(x, w, y, 1)
        b = w1_exact_1d(PiecewiseCdf.discrete(x, w), PiecewiseCdf.discrete(y))
        assert a == pytest.approx(b, rel=1e-12, abs=1e-14)
        u = wp_exact_1d(x, w, ("uniform", -1.0, 2.0), 1)
        assert u == pytest.approx(w1_exact_1d(PiecewiseCdf.discrete(x, w), PiecewiseCdf.uniform(-1, 2)),
                                  rel=1e-12)


@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.sampled_from([1, 2]))
@settings(max_examples=80)
def test_wp_triangle_inequality(locs, p):
    a, b, c = (np.array([v, v + 0.5]) for v in locs)
    w = [0.5, 0.5]
    dab = wp_exact_1d(a, w, b, p)
    dbc = wp_exact_1d(b, w, c, p)
    dac = wp_exact_1d(a, w, c, p)
    assert dac <= dab + dbc + 1e-9


def test_exact_lp_examples():
    p = np.array([0.2, 0.3, 0.5])
    C = 1.0 - np.eye(3)
    assert exact_lp_small(p, p, C)[0] == 0.0
    assert exact_lp_small([1.0], [0.5, 0.5], [[1.0, 3.0]])[0] == 2.0
    with pytest.raises(ValueError):
        exact_lp_small([0.5, 0.6], [1.0], [[0.0], [0.0]])
    with pytest.raises(ValueError):
        exact_lp_small(np.full(101, 1 / 101), np.full(101, 1 / 101), np.zeros((101, 101)))


def test_exact_lp_matches_highs_and_strong_duality():
    gen = np.random.default_rng(4)
    for _ in range(60):
        N, M = gen.integers(1, 7, size=2)
        p, q = gen.dirichlet(np.ones(N)), gen.dirichlet(np.ones(M))
        C = gen.uniform(0, 5, size=(N, M))
        val, plan, u, v = exact_lp_small(p, q, C)
        assert np.allclose(plan.sum(1), p, atol=1e-12) and np.allclose(plan.sum(0), q, atol=1e-12)
        assert np.all(plan >= -1e-15)
        assert np.all(u[:, None] + v[None, :] <= C + 1e-9)
        assert abs(val - (p @ u + q @ v)) <= 1e-9
        A = np.vstack([np.kron(np.eye(N), np.ones(M)), np.kron(np.ones(N), np.eye(M))])
        ref = linprog(C.ravel(), A_eq=A, b_eq=np.concatenate([p, q]), method="highs")
        assert abs(val - ref.fun) <= 1e-9
