import numpy as np
from hypothesis import given, settings, strategies as st

from pepo_lab.optim import maximize_box, pairwise_objective


def quadratic(center, scale):
    def fun(x):
        r = x - center
        return -0.5 * float(np.sum(scale * r * r)), -scale * r, -np.diag(scale)
    return fun


def test_unconstrained_quadratic():
    res = maximize_box(quadratic(np.array([0.3, -0.2]), np.array([1.0, 10.0])), np.zeros(2), -1, 1)
    np.testing.assert_allclose(res.x, [0.3, -0.2], atol=1e-12)
    assert res.converged and not res.stalled


def test_box_active():
    res = maximize_box(quadratic(np.array([3.0, -0.5]), np.ones(2)), np.zeros(2), -1, 1, record=True)
    np.testing.assert_allclose(res.x, [1.0, -0.5], atol=1e-12)
    assert res.converged
    assert np.all(np.diff(res.history) >= 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_random_concave_quadratics(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    M = rng.normal(size=(n, n))
    Q = M @ M.T + 0.1 * np.eye(n)
    c = rng.normal(size=n) * 2

    def fun(x):
        r = x - c
        return -0.5 * float(r @ Q @ r), -Q @ r, -Q

    res = maximize_box(fun, np.zeros(n), -1, 1, record=True)
    assert res.converged
    assert np.all(np.diff(res.history) >= -1e-12)
    # KKT: projected gradient vanishes
    g = fun(res.x)[1]
    assert np.max(np.abs(np.clip(res.x + g, -1, 1) - res.x)) <= 1e-7


def test_pairwise_objective_ignores_diagonal_in_derivatives():
    def phi(d):
        return -d * d, -2 * d, -2 * np.ones_like(d)

    win = np.array([[5.0, 1.0], [2.0, 3.0]])
    val, g, H = pairwise_objective(win, np.array([0.4, -0.1]), phi)
    assert val == -1.0 * 0.25 - 2.0 * 0.25
    # d/du0 of -(u0-u1)^2 weighted by the 1 + 2 off-diagonal comparisons
    np.testing.assert_allclose(g, [-3.0, 3.0])
    np.testing.assert_allclose(H, [[-6.0, 6.0], [6.0, -6.0]])
    np.testing.assert_allclose(H, H.T)
    np.testing.assert_allclose(H.sum(axis=1), 0.0, atol=1e-15)
