"""Riccati-Volterra solvers: gain iteration, direct marching, regularity.

The gain iteration alternates Lyapunov-Volterra solves with gain updates

    Xi    <- -(R + D'<>P<>D)^+ (S + D'<>P<>C)
    Gamma <- -(R + D'<>P<>D)^+ (B'<>P)

starting from zero gains; the quadratic forms of the iterates are monotone
non-increasing on every free term.  The direct marcher applies the same
backward time-marching scheme to the nonlinear equation itself and serves as
an independent cross-check.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NearSingularGainWarning, SolverDivergenceError
from .fields import MatrixField, PiPair, Problem, Strategy, TriangleKernel, _sym
from .lyapunov import quadratic_form, rhs_from_gains, solve_lyapunov
from .volterra_ops import SandwichPlan, _rint_level, rint


def pinv_threshold(M: np.ndarray, rel_tol: float = 1e-10) -> np.ndarray:
    """Moore-Penrose pseudoinverse with singular values below rel_tol * s_max cut."""
    M = np.asarray(M, dtype=float)
    u, s, vt = np.linalg.svd(M)
    cut = rel_tol * (s[0] if s.size else 0.0)
    inv = np.where(s > cut, 1.0 / np.where(s > cut, s, 1.0), 0.0)
    return (vt.T * inv) @ u.T


@dataclass
class RegularityReport:
    """Node-wise regularity diagnostics of a candidate solution."""

    min_eig_profile: np.ndarray
    lambda_min: float
    strongly_regular: bool
    xi_range_residual: np.ndarray
    gamma_range_residual: float
    regular: bool
    tol: float

    def as_dict(self) -> dict:
        return {
            "lambda": self.lambda_min,
            "strongly_regular": bool(self.strongly_regular),
            "regular": bool(self.regular),
            "max_xi_range_residual": float(self.xi_range_residual.max()),
            "gamma_range_residual": float(self.gamma_range_residual),
            "tol": self.tol,
        }


def _gain_fields(P: PiPair, p: Problem) -> dict:
    """Full-grid products needed by gains and diagnostics.

    Returns M = R + (D'<>P<>D), the cross field S + (D'<>P<>C), and the
    triangle values of (B'<>P).
    """
    n = p.grid.n_nodes
    plan_dd = SandwichPlan(p.D.transpose(), p.D)
    plan_dc = SandwichPlan(p.D.transpose(), p.C)
    m_vals = np.zeros((n, p.ell, p.ell))
    cross = np.zeros((n, p.ell, p.d))
    for k in range(n):
        m_vals[k] = _sym(plan_dd.value(k, P.p1, P.p2))
        cross[k] = plan_dc.value(k, P.p1, P.p2)
    m_vals = m_vals + p.R.values
    cross = cross + p.S.values
    if p.B.is_zero:
        btp = np.zeros((n, n, p.ell, p.d))
    else:
        btp = np.swapaxes(rint(P, p.B).point_table(), -1, -2)
    return {"m": m_vals, "cross": cross, "btp": btp}


def regularity_report(P: PiPair, p: Problem, tol: float = 1e-8) -> RegularityReport:
    """Eigenvalue profile of R + D'<>P<>D and range-condition residuals."""
    gf = _gain_fields(P, p)
    n = p.grid.n_nodes
    m_vals = gf["m"]
    eigs = np.array([np.linalg.eigvalsh(_sym(m)).min() for m in m_vals])
    lam = float(eigs.min())
    pinvs = np.stack([pinv_threshold(m) for m in m_vals])
    proj = np.eye(p.ell) - np.matmul(m_vals, pinvs)  # I - M M^+
    xi_res = np.linalg.norm(np.matmul(proj, gf["cross"]), axis=(1, 2))
    gam_res = 0.0
    if not p.B.is_zero:
        resid = np.einsum("kab,ikbc->ikac", proj, gf["btp"])
        gam_res = float(np.linalg.norm(resid, axis=(2, 3)).max())
    strongly = lam > 0.0
    regular = bool(eigs.min() >= -tol and xi_res.max() <= tol and gam_res <= tol)
    return RegularityReport(eigs, lam, strongly, xi_res, gam_res,
                            regular or strongly, tol)


def gain_update(P: PiPair, p: Problem,
                rel_tol: float = 1e-10) -> tuple[MatrixField, TriangleKernel]:
    """Feedback gains induced by a candidate pair P.

    Uses the thresholded pseudoinverse of M = R + D'<>P<>D; for strongly
    regular M this coincides with the true inverse.  Emits
    ``NearSingularGainWarning`` when M is nearly singular at some node.
    """
    gf = _gain_fields(P, p)
    n = p.grid.n_nodes
    m_vals = _sym(gf["m"])
    svals = np.linalg.svd(m_vals, compute_uv=False)
    if np.any(svals[:, -1] <= 10.0 * rel_tol * np.maximum(svals[:, 0], 1e-300)):
        warnings.warn("R + D'<>P<>D is near-singular at some node; "
                      "gains use the thresholded pseudoinverse",
                      NearSingularGainWarning, stacklevel=2)
    pinvs = np.stack([pinv_threshold(m, rel_tol) for m in m_vals])
    xi = -np.matmul(pinvs, gf["cross"])
    if p.B.is_zero:
        gamma = TriangleKernel.zeros(p.grid, p.ell, p.d)
    else:
        gvals = -np.einsum("kab,ikbc->ikac", pinvs, gf["btp"])
        gamma = TriangleKernel.from_samples(p.grid, gvals)
    return MatrixField(p.grid, xi), gamma


def _gain_delta(xi_new: MatrixField, xi_old: MatrixField,
                gm_new: TriangleKernel, gm_old: TriangleKernel) -> float:
    """sup-norm of the Xi change plus triangle-L2 norm of the Gamma change."""
    d_xi = float(np.abs(xi_new.values - xi_old.values).max())
    gv = gm_new.point_table() - gm_old.point_table()
    h = xi_new.grid.step
    d_gm = float(np.sqrt(h * h * np.sum(gv**2)))
    return d_xi + d_gm


def _probe_fields(p: Problem, n_random: int = 3, seed: int = 20240817) -> list[MatrixField]:
    """Coordinate constants plus seeded random grid functions (monotonicity probes)."""
    probes = []
    for j in range(p.d):
        e = np.zeros((p.d, 1))
        e[j, 0] = 1.0
        probes.append(MatrixField.constant(p.grid, e))
    rng = np.random.default_rng(seed)
    for _ in range(n_random):
        probes.append(MatrixField(p.grid, rng.normal(size=(p.grid.n_nodes, p.d, 1))))
    return probes


@dataclass
class RiccatiSolution:
    """Converged Riccati-Volterra data: pair, gains, iterate log, diagnostics."""

    P: PiPair
    xi_check: MatrixField
    gamma_check: TriangleKernel
    iterate_log: list = field(default_factory=list)
    regularity: RegularityReport | None = None
    converged: bool = False
    outer_iterations: int = 0

    @property
    def strongly_regular(self) -> bool:
        return self.regularity is not None and self.regularity.strongly_regular

    def optimal_strategy(self, v_hat: MatrixField | None = None) -> Strategy:
        grid = self.P.grid
        if v_hat is None:
            v_hat = MatrixField.zeros(grid, self.xi_check.rows, 1)
        return Strategy(self.xi_check, self.gamma_check, v_hat)


def kleinman_solve(p: Problem, tol: float = 1e-8, max_outer: int = 60,
                   lyap_tol: float = 1e-10, max_inner: int = 50,
                   probe_seed: int = 20240817) -> RiccatiSolution:
    """Gain iteration for the Riccati-Volterra equation.

    Starts from zero gains, alternates Lyapunov-Volterra solves with gain
    updates, and stops once the combined gain change falls below ``tol``.
    Each iterate's quadratic form is recorded on a fixed probe set; the
    sequence is monotone non-increasing.  The final report flags whether the
    limit is strongly regular.
    """
    grid = p.grid
    xi = MatrixField.zeros(grid, p.ell, p.d)
    gamma = TriangleKernel.zeros(grid, p.ell, p.d)
    probes = _probe_fields(p, seed=probe_seed)
    log = []
    P = None
    converged = False
    iterations = 0
    for it in range(1, max_outer + 1):
        iterations = it
        rhs = rhs_from_gains(xi, gamma, p)
        P = solve_lyapunov(xi, gamma, rhs, p, tol=lyap_tol, max_inner=max_inner)
        forms = [quadratic_form(P, 0, x) for x in probes]
        xi_new, gamma_new = gain_update(P, p)
        delta = _gain_delta(xi_new, xi, gamma_new, gamma)
        log.append({"iteration": it, "gain_delta": delta, "probe_forms": forms})
        xi, gamma = xi_new, gamma_new
        if delta < tol:
            converged = True
            break
    if not converged:
        raise SolverDivergenceError(
            f"gain iteration did not converge in {max_outer} iterations "
            f"(last gain change {log[-1]['gain_delta']:.3e})", log)
    report = regularity_report(P, p)
    return RiccatiSolution(P=P, xi_check=xi, gamma_check=gamma, iterate_log=log,
                           regularity=report, converged=True,
                           outer_iterations=iterations)


def direct_march(p: Problem, tol: float = 1e-10, max_inner: int = 50,
                 pinv_rel_tol: float = 1e-10) -> PiPair:
    """Backward marching applied directly to the nonlinear Riccati equations.

    Independent of the gain iteration: at every level the inner fixed point
    re-evaluates the pseudoinverse factor from the level's own tail data.
    """
    grid = p.grid
    n = grid.n_nodes
    d = p.d
    h = grid.step
    plan_cc = SandwichPlan(p.C.transpose(), p.C)
    plan_dc = SandwichPlan(p.D.transpose(), p.C)
    plan_dd = SandwichPlan(p.D.transpose(), p.D)
    ptA, wfA = p.A.point_table(), p.A.weights_first()
    ptB, wfB = p.B.point_table(), p.B.weights_first()
    q_vals, s_vals, r_vals = p.Q.values, p.S.values, p.R.values
    b_zero = p.B.is_zero

    p1 = np.zeros((n, d, d))
    p2 = np.zeros((n, n, n, d, d))
    history = []
    for k in range(n - 1, -1, -1):
        if k < n - 1:
            p1[k] = p1[k + 1]
            m = n - k
            slab = np.empty((m, m, d, d))
            prev = p2[k + 1 :, k + 1 :, k + 1]
            slab[1:, 1:] = prev
            slab[0, 1:] = prev[0]
            slab[1:, 0] = prev[:, 0]
            slab[0, 0] = prev[0, 0]
            p2[k:, k:, k] = slab
        else:
            p1[k] = _sym(q_vals[k])
        converged = False
        change = np.inf
        for sweep in range(max_inner):
            cc = _sym(plan_cc.value(k, p1, p2))
            dc = plan_dc.value(k, p1, p2) + s_vals[k]
            dd = _sym(plan_dd.value(k, p1, p2))
            m_k = _sym(r_vals[k] + dd)
            m_pinv = pinv_threshold(m_k, pinv_rel_tol)
            new_p1k = _sym(q_vals[k] + cc - dc.T @ m_pinv @ dc)
            pa = (_rint_level(p1, p2, k, ptA, wfA) if not p.A.is_zero
                  else np.zeros((n - k, d, d)))
            if b_zero:
                bound = pa
            else:
                pb = _rint_level(p1, p2, k, ptB, wfB)
                bound = pa - pb @ (m_pinv @ dc)
            slab_new = np.empty_like(p2[k:, k:, k])
            if k < n - 1:
                slab_new[1:, 1:] = p2[k + 1 :, k + 1 :, k + 1]
                if not b_zero:
                    btp = np.swapaxes(pb, -1, -2)
                    dot = np.einsum("iab,bc,jcd->ijad", pb[1:], m_pinv, btp[1:])
                    slab_new[1:, 1:] = slab_new[1:, 1:] - h * dot
            slab_new[:, 0] = bound
            slab_new[0, :] = np.swapaxes(bound, -1, -2)
            slab_new[0, 0] = _sym(bound[0])
            change = max(float(np.abs(new_p1k - p1[k]).max()),
                         float(np.abs(slab_new - p2[k:, k:, k]).max()))
            p1[k] = new_p1k
            p2[k:, k:, k] = slab_new
            if change < tol:
                converged = True
                break
        history.append({"level": k, "change": change})
        if not converged:
            raise SolverDivergenceError(
                f"direct march level {k} did not contract below {tol} "
                f"in {max_inner} sweeps (last change {change:.3e})", history)
    return PiPair(grid, p1, p2).symmetrize_inplace()
