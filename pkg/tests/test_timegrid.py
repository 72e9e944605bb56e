import numpy as np
import pytest

from volterra_lq.errors import InvalidArgumentError, KernelNotSquareIntegrableError
from volterra_lq.timegrid import gap_moments, make_grid, singular_weights, tail_integral


def test_make_grid_nodes():
    g = make_grid(1.0, 4)
    assert np.allclose(g.nodes, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert g.step == 0.25
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 1.0


def test_make_grid_step():
    g = make_grid(2.0, 2)
    assert g.step == 1.0
    assert abs(g.step * g.n_steps - g.horizon) < 1e-15


@pytest.mark.parametrize("horizon,n", [(1.0, 1), (0.0, 4), (-2.0, 8), (1.0, 0)])
def test_make_grid_rejects_bad_args(horizon, n):
    with pytest.raises(InvalidArgumentError):
        make_grid(horizon, n)


def test_constant_weights_reproduce_interval_lengths():
    g = make_grid(2.0, 8)
    tab = singular_weights(g, "constant", c=1.0)
    for m in range(1, g.n_steps + 1):
        # sum of cell weights over [0, t_m] is exactly t_m
        assert sum(tab.weights[m, :m]) == pytest.approx(g.nodes[m], abs=1e-15)
        assert np.all(tab.weights[m, :m] == g.step)


def test_fractional_weights_telescope_to_exact_moment():
    g = make_grid(1.0, 16)
    tab = singular_weights(g, "fractional", c=1.0, alpha=0.75)
    total = tab.weights[g.n_steps].sum()
    # sum_j w(N, j) = T^alpha / alpha = 4/3 exactly by telescoping
    assert total == pytest.approx(4.0 / 3.0, abs=1e-14)


def test_fractional_weight_formula():
    g = make_grid(1.0, 5)
    c, alpha = 2.0, 0.8
    tab = singular_weights(g, "fractional", c=c, alpha=alpha)
    t = g.nodes
    for m in range(1, 6):
        for j in range(m):
            expect = c * ((t[m] - t[j]) ** alpha - (t[m] - t[j + 1]) ** alpha) / alpha
            assert tab.weights[m, j] == pytest.approx(expect, rel=1e-14)


def test_weights_nonnegative_and_zero_outside_triangle():
    g = make_grid(1.0, 6)
    tab = singular_weights(g, "fractional", c=1.0, alpha=0.6)
    assert np.all(tab.weights >= 0.0)
    for m in range(g.n_steps + 1):
        assert np.all(tab.weights[m, m:] == 0.0)


def test_fractional_alpha_below_half_rejected():
    g = make_grid(1.0, 4)
    with pytest.raises(KernelNotSquareIntegrableError):
        singular_weights(g, "fractional", c=1.0, alpha=0.4)


def test_tail_integral_constant_and_empty():
    g = make_grid(1.0, 10)
    ones = np.ones(11)
    assert tail_integral(ones, 0, g) == pytest.approx(1.0, abs=1e-15)
    assert tail_integral(ones, 10, g) == 0.0


def test_tail_integral_left_riemann_value():
    g = make_grid(1.0, 100)
    # left-Riemann sum of int_0^1 t dt at N=100 is 0.495
    val = tail_integral(g.nodes, 0, g)
    assert val == pytest.approx(0.495, abs=1e-12)


def test_tail_integral_linearity():
    rng = np.random.default_rng(7)
    g = make_grid(1.5, 12)
    f1 = rng.normal(size=13)
    f2 = rng.normal(size=13)
    a, b = 2.5, -1.25
    for k in (0, 3, 12):
        lhs = tail_integral(a * f1 + b * f2, k, g)
        rhs = a * tail_integral(f1, k, g) + b * tail_integral(f2, k, g)
        assert lhs == pytest.approx(rhs, abs=1e-13)


def test_tail_integral_out_of_range():
    g = make_grid(1.0, 4)
    with pytest.raises(InvalidArgumentError):
        tail_integral(np.ones(5), 5, g)
    with pytest.raises(InvalidArgumentError):
        tail_integral(np.ones(5), -1, g)
    with pytest.raises(InvalidArgumentError):
        tail_integral(np.ones(6), 0, g)


def test_gap_moments_constant_reduces_to_length():
    lo = np.array([0.0, 0.5])
    hi = np.array([0.25, 1.0])
    assert np.allclose(gap_moments(1.0, lo, hi), hi - lo)
