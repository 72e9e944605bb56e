"""End-to-end consistency on a problem with every term active.

Nonzero A, B, C, D, S and all four inhomogeneous terms: the feedback gain
kernel, the backward solution, and every value-functional term participate.
"""

import numpy as np
import pytest

from volterra_lq.ebsvie import optimal_inhomogeneous, value_functional
from volterra_lq.errors import SolverDivergenceError
from volterra_lq.fields import MatrixField, Strategy, TriangleKernel, build_problem
from volterra_lq.lyapunov import rhs_from_gains, solve_lyapunov
from volterra_lq.riccati import direct_march, kleinman_solve
from volterra_lq.simulate import estimate_cost, simulate_closed_loop
from volterra_lq.verify import perturbed_strategies


def full_config(n, singular=False):
    c_spec = ({"family": "fractional", "params": {"coef": 0.5, "alpha": 0.75}}
              if singular else {"family": "constant", "params": {"value": 0.5}})
    d_spec = ({"family": "fractional", "params": {"coef": 0.3, "alpha": 0.8}}
              if singular else {"family": "constant", "params": {"value": 0.3}})
    return {
        "dimensions": {"d": 1, "l": 1},
        "horizon": 1.0,
        "steps": n,
        "kernels": {
            "A": {"family": "constant", "params": {"value": 0.4}},
            "B": {"family": "constant", "params": {"value": 0.8}},
            "C": c_spec,
            "D": d_spec,
        },
        "weights": {"Q": 1.0, "R": 1.0, "S": 0.1},
        "inhomogeneous": {
            "b": {"family": "constant", "params": {"value": 0.3}},
            "sigma": {"family": "constant", "params": {"value": 0.6}},
            "q": 0.2,
            "rho": 0.4,
        },
        "input": {"t0_index": 0, "x": 0.5},
    }


@pytest.fixture(scope="module")
def solved():
    p = build_problem(full_config(128))
    sol = kleinman_solve(p)
    ff = optimal_inhomogeneous(sol.P, sol.xi_check, sol.gamma_check, p)
    return p, sol, ff


def test_value_matches_monte_carlo_with_all_terms(solved):
    p, sol, ff = solved
    assert np.abs(ff.eta.values).max() > 0.1  # the backward solution is active
    assert np.abs(sol.gamma_check.point_table()).max() > 0.5
    value = value_functional(sol.P, ff.eta, ff.kappa, 0, p.x, p)
    strat = Strategy(sol.xi_check, sol.gamma_check, ff.v_hat)
    batch = simulate_closed_loop(p, strat, 0, p.x, 8000, seed=17)
    mean, se = estimate_cost(batch, p)
    assert abs(value - mean) <= 3.0 * se + 0.2 * p.grid.step


def test_optimal_beats_perturbations_with_all_terms(solved):
    p, sol, ff = solved
    base = Strategy(sol.xi_check, sol.gamma_check, ff.v_hat)
    batch = simulate_closed_loop(p, base, 0, p.x, 8000, seed=23)
    mean, se = estimate_cost(batch, p)
    for i, pert in enumerate(perturbed_strategies(base, p, count=3)):
        b = simulate_closed_loop(p, pert, 0, p.x, 8000, seed=501 + i)
        pm, pse = estimate_cost(b, p)
        assert pm >= mean - 2.0 * max(pse, se)


def test_singular_kernels_two_schemes_agree():
    p = build_problem(full_config(64, singular=True))
    sol = kleinman_solve(p)
    assert sol.strongly_regular
    P = direct_march(p)
    scale = np.abs(sol.P.p1).max()
    assert np.abs(P.p1 - sol.P.p1).max() / scale <= 0.005
    assert sol.P.symmetry_violation() <= 1e-10


def test_lyapunov_divergence_reports_history():
    p = build_problem(full_config(8))
    xi = MatrixField.constant(p.grid, [[40.0]])
    gamma = TriangleKernel.constant(p.grid, [[40.0]])
    rhs = rhs_from_gains(xi, gamma, p)
    with pytest.raises(SolverDivergenceError) as exc:
        solve_lyapunov(xi, gamma, rhs, p, max_inner=8)
    assert exc.value.history
    assert exc.value.history[-1]["change"] > 0.0
