import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdot.cost import CostSpec, SingularGradientError, cost, cost_grad_y, cost_matrix, grad_matrix


def test_cost_examples():
    assert cost(CostSpec(2.0), [0, 0], [3, 4]) == 25.0
    assert cost(CostSpec.euclidean(), [1.5], [1.5]) == 0.0
    assert cost(CostSpec(1.5), [0], [4]) == pytest.approx(8.0, rel=1e-15)


def test_cost_grad_examples():
    assert np.array_equal(cost_grad_y(CostSpec(2.0), [0, 0], [1, 1]), [2, 2])
    assert np.array_equal(cost_grad_y(CostSpec(1.0), [0], [3]), [1])
    assert np.array_equal(cost_grad_y(CostSpec(2.0), [1, 0, 0], [0, 0, 0]), [-2, 0, 0])


def test_errors():
    with pytest.raises(ValueError):
        cost(CostSpec(2.0), [0, 0], [1])
    with pytest.raises(ValueError):
        CostSpec(0.5)
    with pytest.raises(SingularGradientError):
        cost_grad_y(CostSpec(1.5), [1.0], [1.0])
    assert np.array_equal(cost_grad_y(CostSpec(3.0), [1.0], [1.0]), [0.0])


def test_spec_kinds_and_json():
    assert CostSpec.squared_euclidean().kind == "squared_euclidean"
    assert CostSpec.euclidean_power(1.5).kind == "euclidean_power"
    assert CostSpec.from_json({"kind": "power", "p": 2.0}) == CostSpec(2.0)
    assert CostSpec.from_json(CostSpec(1.5).to_json()) == CostSpec(1.5)
    with pytest.raises(ValueError):
        CostSpec.from_json({"kind": "cosine"})


coords = st.lists(st.floats(-5, 5), min_size=3, max_size=3)


@given(coords, coords, st.sampled_from([1.0, 1.5, 2.0, 3.0]))
@settings(max_examples=100)
def test_cost_nonnegative_symmetric(x, y, p):
    spec = CostSpec(p)
    assert cost(spec, x, y) >= 0
    assert cost(spec, x, y) == cost(spec, y, x)


def test_gradient_matches_central_differences():
    gen = np.random.default_rng(0)
    for _ in range(100):
        d = int(gen.integers(1, 4))
        x, y = gen.normal(size=d), gen.normal(size=d)
        spec = CostSpec(float(gen.uniform(1.0, 3.0)))
        g = cost_grad_y(spec, x, y)
        h = 1e-6
        fd = np.array([(cost(spec, x, y + h * e) - cost(spec, x, y - h * e)) / (2 * h)
                       for e in np.eye(d)])
        assert np.linalg.norm(g - fd) <= 1e-6 * max(1.0, np.linalg.norm(g))


def test_matrix_forms_agree_with_pointwise():
    gen = np.random.default_rng(1)
    X, Y = gen.normal(size=(4, 2)), gen.normal(size=(6, 2))
    for p in (1.0, 1.5, 2.0):
        spec = CostSpec(p)
        C = cost_matrix(spec, X, Y)
        assert C.shape == (4, 6)
        assert np.allclose(C, [[cost(spec, x, y) for y in Y] for x in X], rtol=1e-14)
        G = grad_matrix(spec, X[0], Y)
        assert np.allclose(G, [cost_grad_y(spec, X[0], y) for y in Y], rtol=1e-12)
