import numpy as np
import pytest

from volterra_lq.errors import SolverDivergenceError
from volterra_lq.fields import MatrixField, PiPair, build_problem
from volterra_lq.lyapunov import quadratic_form
from volterra_lq.riccati import (
    direct_march,
    gain_update,
    kleinman_solve,
    pinv_threshold,
    regularity_report,
)


def make_problem(n=64, d=1, ell=1, kernels=None, frac=None, Q=1.0, R=1.0, S=None, x=1.0):
    kspec = {name: {"family": "constant", "params": {"value": val}}
             for name, val in (kernels or {}).items()}
    for name, (coef, alpha) in (frac or {}).items():
        kspec[name] = {"family": "fractional", "params": {"coef": coef, "alpha": alpha}}
    cfg = {
        "dimensions": {"d": d, "l": ell},
        "horizon": 1.0,
        "steps": n,
        "kernels": kspec,
        "weights": {"Q": Q, "R": R, **({"S": S} if S is not None else {})},
        "input": {"t0_index": 0, "x": x},
    }
    return build_problem(cfg)


# -- pseudoinverse ---------------------------------------------------------------


def test_pinv_identity():
    assert np.allclose(pinv_threshold(np.eye(2)), np.eye(2), atol=1e-14)


def test_pinv_zero_matrix():
    assert np.all(pinv_threshold(np.zeros((3, 3))) == 0.0)


def test_pinv_diagonal_with_null_direction():
    out = pinv_threshold(np.diag([2.0, 0.0]))
    assert np.allclose(out, np.diag([0.5, 0.0]), atol=1e-14)


# -- gain updates ----------------------------------------------------------------


def test_gain_update_zero_numerators():
    p = make_problem(n=16, kernels={"A": 0.5})
    P = PiPair.constants(p.grid, [[1.0]], [[0.0]])
    xi, gamma = gain_update(P, p)
    assert not xi.values.any()
    assert gamma.is_zero or not gamma.point_table().any()


def test_gain_update_scalar_formula():
    # P1 = 1, P2 = 0, D = 1, R = 1, S = 1: Xi(t) = -1 / (2 - t)
    p = make_problem(n=100, kernels={"D": 1.0}, S=1.0)
    P = PiPair.constants(p.grid, [[1.0]], [[0.0]])
    xi, gamma = gain_update(P, p)
    expect = -1.0 / (2.0 - p.grid.nodes)
    assert np.abs(xi.values[:, 0, 0] - expect).max() <= 1e-12
    assert not gamma.point_table().any()


def test_gain_update_b_zero_gives_zero_gamma_exactly():
    p = make_problem(n=24, kernels={"A": 0.5, "C": 0.5, "D": 0.5}, S=0.2)
    P = PiPair.constants(p.grid, [[1.0]], [[0.5]])
    _, gamma = gain_update(P, p)
    assert gamma.is_zero


def test_gain_update_warns_when_m_near_singular():
    from volterra_lq.errors import NearSingularGainWarning

    p = make_problem(n=12, R=0.0, Q=1.0)
    P = PiPair.zeros(p.grid, 1)  # M = R + 0 = 0 at every node
    with pytest.warns(NearSingularGainWarning):
        gain_update(P, p)


# -- gain iteration ---------------------------------------------------------------


def test_kleinman_decoupled_single_iteration():
    p = make_problem(n=32, Q=2.0)
    sol = kleinman_solve(p)
    assert sol.outer_iterations == 1
    assert np.abs(sol.P.p1 - 2.0).max() <= 1e-12
    assert np.abs(sol.P.p2).max() <= 1e-12
    assert not sol.xi_check.values.any()
    assert sol.gamma_check.is_zero or not sol.gamma_check.point_table().any()
    assert sol.regularity.lambda_min == pytest.approx(1.0, abs=1e-12)
    assert sol.strongly_regular


def test_kleinman_tanh_value():
    p = make_problem(n=200, kernels={"B": 1.0})
    sol = kleinman_solve(p)
    val = quadratic_form(sol.P, 0, MatrixField.constant(p.grid, [[1.0]]))
    assert val == pytest.approx(np.tanh(1.0), rel=0.02)
    assert sol.strongly_regular


def test_kleinman_d_only_closed_form():
    p = make_problem(n=128, kernels={"D": 1.0})
    sol = kleinman_solve(p)
    assert np.abs(sol.P.p1 - 1.0).max() <= 1e-10
    assert np.abs(sol.P.p2).max() <= 1e-10
    assert not sol.xi_check.values.any()
    assert sol.regularity.lambda_min == pytest.approx(1.0, abs=1e-10)
    # M(t) = 2 - t along the grid
    from volterra_lq.riccati import _gain_fields

    m = _gain_fields(sol.P, p)["m"][:, 0, 0]
    assert np.abs(m - (2.0 - p.grid.nodes)).max() <= 1e-10


def test_kleinman_monotone_probe_forms():
    p = make_problem(n=48, kernels={"A": 0.5, "B": 1.0, "C": 0.6, "D": 0.4}, S=0.2)
    sol = kleinman_solve(p)
    forms = np.array([rec["probe_forms"] for rec in sol.iterate_log])
    assert forms.shape[0] >= 2
    increases = np.diff(forms, axis=0)
    assert increases.max() <= 1e-10


def test_kleinman_b_zero_collapse():
    p = make_problem(n=48, kernels={"A": 0.7, "D": 0.4},
                     frac={"C": (0.6, 0.75)}, S=0.3)
    sol = kleinman_solve(p)
    # Gamma vanishes identically and P2 slices are constant in the third index
    assert sol.gamma_check.is_zero or not sol.gamma_check.point_table().any()
    p2 = sol.P.p2
    n = p.grid.n_nodes
    worst = 0.0
    for i in range(n):
        for j in range(i + 1):
            m = min(i, j)
            sl = p2[i, j, : m + 1]
            worst = max(worst, float(np.abs(sl - sl[m]).max()))
    assert worst <= 1e-12


def test_kleinman_not_strongly_regular_flagged():
    p = make_problem(n=16, R=-1.0, Q=0.0)
    sol = kleinman_solve(p)
    assert not sol.strongly_regular
    assert sol.regularity.lambda_min == pytest.approx(-1.0, abs=1e-12)


def test_kleinman_standard_condition_randomized():
    rng = np.random.default_rng(20240803)
    d, ell = 2, 1
    A = 0.4 * rng.normal(size=(d, d))
    B = 0.6 * rng.normal(size=(d, ell))
    C = 0.3 * rng.normal(size=(d, d))
    D = 0.5 * rng.normal(size=(d, ell))
    S = 0.3 * rng.normal(size=(ell, d))
    L = rng.normal(size=(d, d)) + 0.5 * np.eye(d)
    Q = S.T @ S + L.T @ L
    cfg = {
        "dimensions": {"d": d, "l": ell},
        "horizon": 1.0,
        "steps": 64,
        "kernels": {
            "A": {"family": "constant", "params": {"value": A.tolist()}},
            "B": {"family": "constant", "params": {"value": B.tolist()}},
            "C": {"family": "constant", "params": {"value": C.tolist()}},
            "D": {"family": "constant", "params": {"value": D.tolist()}},
        },
        "weights": {"Q": {"type": "constant", "value": Q.tolist()},
                    "R": 1.0,
                    "S": {"type": "constant", "value": S.tolist()}},
        "input": {"t0_index": 0, "x": [1.0, -0.5]},
    }
    p = build_problem(cfg)
    sol = kleinman_solve(p)
    assert sol.converged
    assert sol.strongly_regular
    assert sol.regularity.lambda_min >= 1.0 - 1e-8


def test_kleinman_divergence_carries_log():
    p = make_problem(n=16, kernels={"B": 1.0})
    with pytest.raises(SolverDivergenceError) as exc:
        kleinman_solve(p, max_outer=1, tol=1e-12)
    assert exc.value.history


# -- direct marching ---------------------------------------------------------------


def test_direct_march_zero_coupling():
    p = make_problem(n=24, Q=2.0)
    P = direct_march(p)
    assert np.abs(P.p1 - 2.0).max() <= 1e-12
    assert np.abs(P.p2).max() <= 1e-12


def test_direct_march_d_only():
    p = make_problem(n=64, kernels={"D": 1.0})
    P = direct_march(p)
    assert np.abs(P.p1 - 1.0).max() <= 1e-10
    assert np.abs(P.p2).max() <= 1e-10


def test_direct_march_agrees_with_kleinman():
    for kernels, S in (({"B": 1.0}, None), ({"A": 0.5, "B": 0.8, "C": 0.5, "D": 0.4}, 0.2)):
        p = make_problem(n=64, kernels=kernels, S=S)
        sol = kleinman_solve(p)
        P = direct_march(p)
        scale = max(np.abs(sol.P.p1).max(), 1e-300)
        assert np.abs(P.p1 - sol.P.p1).max() / scale <= 0.005
        assert np.abs(P.p2 - sol.P.p2).max() <= 0.005 * max(np.abs(sol.P.p2).max(), 1.0)


# -- regularity reports --------------------------------------------------------------


def test_regularity_all_zero_positive_r():
    p = make_problem(n=16)
    rep = regularity_report(PiPair.zeros(p.grid, 1), p)
    assert rep.lambda_min == pytest.approx(1.0, abs=1e-14)
    assert rep.strongly_regular and rep.regular


def test_regularity_indefinite_r():
    p = make_problem(n=16, R=-1.0, Q=0.0)
    rep = regularity_report(PiPair.zeros(p.grid, 1), p)
    assert rep.lambda_min == pytest.approx(-1.0, abs=1e-14)
    assert not rep.strongly_regular
    assert not rep.regular


def test_regularity_strongly_implies_regular():
    p = make_problem(n=24, kernels={"D": 1.0})
    sol = kleinman_solve(p)
    rep = sol.regularity
    assert rep.strongly_regular
    assert rep.regular
