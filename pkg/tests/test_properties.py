"""Property tests for invariants shared across modules."""
import math

import numpy as np
from hypothesis import given, settings, strategies as st

from sdot import inference as inf
from sdot.bound import bound_rhs
from sdot.clt import sigma_p
from sdot.cost import CostSpec, cost_matrix
from sdot.measures import DiscreteMeasure, Sample
from sdot.oracle import exact_lp_small
from sdot.semidual import cell_masses, dual_value, solve_arrays

SQ = CostSpec(2.0)
seeds = st.integers(0, 2**32 - 1)


def _instance(seed, N, m, d=2):
    gen = np.random.default_rng(seed)
    P = DiscreteMeasure(gen.normal(size=(N, d)), gen.dirichlet(np.ones(N)))
    return gen, P, Sample(gen.normal(size=(m, d)))


@given(seeds, st.integers(1, 6), st.integers(1, 40))
@settings(max_examples=100, deadline=None)
def test_cell_masses_sum_to_one(seed, N, m):
    gen, P, Qs = _instance(seed, N, m)
    masses = cell_masses(P, Qs, gen.normal(size=N) * 2, SQ)
    assert math.fsum(masses) == 1.0
    assert masses.min() >= 0


@given(seeds, st.integers(1, 5), st.integers(1, 8), st.sampled_from([1.0, 2.0]))
@settings(max_examples=60, deadline=None)
def test_solver_equals_exact_lp(seed, N, m, p):
    gen, P, Qs = _instance(seed, N, m)
    C = cost_matrix(CostSpec(p), P.points, Qs.rows)
    res = solve_arrays(P.weights, C)
    ref = exact_lp_small(P.weights, np.full(m, 1 / m), C)[0]
    assert abs(res.cost_value - ref) <= 1e-7
    # the returned potential attains the optimum
    assert dual_value(P, Qs, res.potential, CostSpec(p)) >= ref - 1e-7


@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=4))
@settings(max_examples=100)
def test_score_cov_at_balanced_masses_is_sigma_p(raw):
    p = np.array(raw) / math.fsum(raw)
    A = inf.score_cov(p, p)
    assert np.abs(A - sigma_p(p).matrix).max() <= 1e-12


@given(seeds)
@settings(max_examples=15, deadline=None)
def test_band_hessian_structure(seed):
    gen, P, Qs = _instance(seed, 4, 3000)
    z = gen.normal(size=4) * 0.3
    H = inf.hessian_band(P, Qs, z, SQ, 0.2)
    Pc = np.eye(4) - 0.25
    assert np.array_equal(H, H.T)
    assert np.abs(H.sum(axis=1)).max() < 1e-12
    assert H[~np.eye(4, dtype=bool)].min() >= 0
    assert np.linalg.eigvalsh(Pc @ H @ Pc).max() <= 1e-10


@given(st.integers(1, 10**4), st.integers(1, 10**6), st.floats(0.1, 100))
@settings(max_examples=100)
def test_bound_rhs_scaling(N, m, K):
    r = bound_rhs(N, m, K)
    assert math.isclose(r, 8 * math.sqrt(2 * N) * K / math.sqrt(m), rel_tol=1e-12)
    assert math.isclose(bound_rhs(4 * N, m, K), 2 * r, rel_tol=1e-12)
