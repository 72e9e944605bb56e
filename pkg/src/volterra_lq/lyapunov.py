"""Lyapunov-Volterra equation: backward marching solver and quadratic forms.

For fixed gains (Xi, Gamma) and inhomogeneity (Q1, Q2, Q3), the solution
pair P = (P1, P2) satisfies, with M denoting tail products of P,

    P1(t) = F1[Xi; P](t) + Q1(t)
    P2(s, t, t) = F2[Xi, Gamma; P](s, t) + Q2(s, t)        (boundary)
    dP2/dt(s1, s2, t) = -(F3[Gamma; P] + Q3)(s1, s2, t)    (interior)

The discrete scheme marches backward from t_N.  At each time level the
F-terms depend on the level's own unknowns through tail integrals, so an
inner fixed-point iteration (explicit predictor from the previous level,
then correction sweeps) resolves the implicit coupling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, SolverDivergenceError
from .fields import MatrixField, PiPair, Problem, TriangleKernel, _sym
from .volterra_ops import SandwichPlan, _rint_level


@dataclass
class LyapunovRHS:
    """Inhomogeneity triple (Q1, Q2, Q3).

    Q1 is a node array (N+1, d, d); Q2 a closed-triangle array
    (N+1, N+1, d, d) indexed [s, t]; Q3 either a dense pyramid array
    (N+1, N+1, N+1, d, d) indexed [s1, s2, t] or the factored form
    Q3(s1, s2, t) = G(s1, t)^T W(t) G(s2, t) given as ``q3_factor=(G, W)``
    (the shape every gain-induced inhomogeneity takes).
    """

    q1: np.ndarray
    q2: np.ndarray
    q3: np.ndarray | None = None
    q3_factor: tuple[TriangleKernel, MatrixField] | None = None

    def q3_level(self, k: int) -> np.ndarray:
        """Slab Q3[i, j, k] for i, j in [k, N]."""
        n = self.q1.shape[0]
        d = self.q1.shape[1]
        if self.q3 is not None:
            return self.q3[k:, k:, k]
        if self.q3_factor is not None:
            G, W = self.q3_factor
            gpt = G.point_table()[k:, k]
            return np.einsum("iba,bc,jcd->ijad", gpt, W.values[k], gpt)
        return np.zeros((n - k, n - k, d, d))


def rhs_from_gains(xi: MatrixField, gamma: TriangleKernel, p: Problem) -> LyapunovRHS:
    """Cost-induced inhomogeneity for the gains (Xi, Gamma):

        Q1 = Q + Xi'S + S'Xi + Xi'R Xi
        Q2(s,t) = Gamma(s,t)' (S(t) + R(t) Xi(t))
        Q3(s1,s2,t) = Gamma(s1,t)' R(t) Gamma(s2,t)
    """
    xiv = xi.values
    q1 = p.Q.values + np.einsum("kba,kbc->kac", xiv, p.S.values)
    q1 = q1 + np.swapaxes(np.einsum("kba,kbc->kac", xiv, p.S.values), -1, -2)
    q1 = q1 + np.einsum("kba,kbc,kcd->kad", xiv, p.R.values, xiv)
    q1 = _sym(q1)
    n = p.grid.n_nodes
    if gamma.is_zero:
        q2 = np.zeros((n, n, p.d, p.d))
        q3f = None
    else:
        gpt = gamma.point_table()
        mix = p.S.values + np.matmul(p.R.values, xiv)
        q2 = np.einsum("ikba,kbc->ikac", gpt, mix)
        q3f = (gamma, p.R)
    return LyapunovRHS(q1=q1, q2=q2, q3_factor=q3f)


class _LevelWork:
    """Per-problem tables shared by the level sweeps."""

    def __init__(self, p: Problem):
        self.p = p
        self.plan_cc = SandwichPlan(p.C.transpose(), p.C)
        self.plan_dc = SandwichPlan(p.D.transpose(), p.C)
        self.plan_dd = SandwichPlan(p.D.transpose(), p.D)
        self.ptA = p.A.point_table()
        self.wfA = p.A.weights_first()
        self.ptB = p.B.point_table()
        self.wfB = p.B.weights_first()
        self.a_zero = p.A.is_zero
        self.b_zero = p.B.is_zero

    def tails(self, k: int, p1: np.ndarray, p2: np.ndarray) -> dict:
        """Sandwiches and one-sided products at level k from current arrays."""
        d, ell = self.p.d, self.p.ell
        n = p1.shape[0]
        out = {
            "cc": _sym(self.plan_cc.value(k, p1, p2)),
            "dc": self.plan_dc.value(k, p1, p2),
            "dd": _sym(self.plan_dd.value(k, p1, p2)),
        }
        out["pa"] = (np.zeros((n - k, d, d)) if self.a_zero
                     else _rint_level(p1, p2, k, self.ptA, self.wfA))
        out["pb"] = (np.zeros((n - k, d, ell)) if self.b_zero
                     else _rint_level(p1, p2, k, self.ptB, self.wfB))
        return out


def _march_base(p2: np.ndarray, k: int) -> np.ndarray:
    """Initial level-k slab extended from level k+1 (explicit predictor seed)."""
    n = p2.shape[0]
    m = n - k
    slab = np.empty((m, m) + p2.shape[3:])
    prev = p2[k + 1 :, k + 1 :, k + 1]
    slab[1:, 1:] = prev
    slab[0, 1:] = prev[0]
    slab[1:, 0] = prev[:, 0]
    slab[0, 0] = prev[0, 0]
    return slab


def solve_lyapunov(xi: MatrixField, gamma: TriangleKernel, rhs: LyapunovRHS,
                   p: Problem, tol: float = 1e-10, max_inner: int = 50) -> PiPair:
    """Backward-marching solution of the Lyapunov-Volterra equation.

    Raises ``SolverDivergenceError`` (carrying the per-level residual history)
    when an inner fixed point fails to contract below ``tol`` within
    ``max_inner`` sweeps.
    """
    grid = p.grid
    n = grid.n_nodes
    d = p.d
    h = grid.step
    if rhs.q1.shape != (n, d, d):
        raise InvalidArgumentError(f"rhs.q1 must have shape {(n, d, d)}")
    work = _LevelWork(p)
    xiv = xi.values
    gpt = gamma.point_table() if not gamma.is_zero else None

    p1 = np.zeros((n, d, d))
    p2 = np.zeros((n, n, n, d, d))
    history = []

    for k in range(n - 1, -1, -1):
        if k < n - 1:
            p1[k] = p1[k + 1]
            p2[k:, k:, k] = _march_base(p2, k)
        else:
            p1[k] = _sym(rhs.q1[k])
            p2[k, k, k] = _sym(rhs.q2[k, k])
        q3slab = rhs.q3_level(k)
        gam_k = gpt[k:, k] if gpt is not None else None
        converged = k == n - 1
        change = 0.0
        for sweep in range(max_inner):
            t = work.tails(k, p1, p2)
            # P1 equation
            f1 = t["cc"]
            if xiv[k].any():
                f1 = f1 + xiv[k].T @ t["dc"] + t["dc"].T @ xiv[k] \
                    + xiv[k].T @ t["dd"] @ xiv[k]
            new_p1k = _sym(f1 + rhs.q1[k])
            # boundary rows: P2(s, t_k, t_k) for s in [k, N]
            f2 = t["pa"] + np.matmul(t["pb"], xiv[k])
            if gam_k is not None:
                mix = t["dc"] + t["dd"] @ xiv[k]
                f2 = f2 + np.einsum("iba,bc->iac", gam_k, mix)
            bound = f2 + rhs.q2[k:, k]
            # interior marching for i, j >= k+1
            slab_new = np.empty_like(p2[k:, k:, k])
            if k < n - 1:
                f3 = q3slab[1:, 1:].copy()
                if gam_k is not None and not work.b_zero:
                    btp = np.swapaxes(t["pb"], -1, -2)
                    f3 += np.einsum("iba,jbc->ijac", gam_k[1:], btp[1:])
                    f3 += np.einsum("iab,jbc->ijac", t["pb"][1:], gam_k[1:])
                if gam_k is not None:
                    f3 += np.einsum("iba,bc,jcd->ijad", gam_k[1:], t["dd"], gam_k[1:])
                slab_new[1:, 1:] = p2[k + 1 :, k + 1 :, k + 1] + h * f3
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
                f"Lyapunov level {k} did not contract below {tol} "
                f"in {max_inner} sweeps (last change {change:.3e})", history)
    return PiPair(grid, p1, p2).symmetrize_inplace()


def gain_coefficients(xi: MatrixField, gamma: TriangleKernel, P: PiPair,
                      p: Problem) -> tuple[MatrixField, TriangleKernel, np.ndarray, LyapunovRHS]:
    """Full F-coefficient evaluation at a given pair P (dense; small-N use).

    Returns (F1, F2, F3, rhs) where F3 is the dense pyramid array and rhs the
    cost-induced inhomogeneity for the same gains.  F1 and Q1 are symmetrized
    to remove quadrature round-off asymmetry.
    """
    grid = p.grid
    n = grid.n_nodes
    d, ell = p.d, p.ell
    work = _LevelWork(p)
    xiv = xi.values
    gpt = gamma.point_table()
    f1 = np.zeros((n, d, d))
    f2 = np.zeros((n, n, d, d))
    f3 = np.zeros((n, n, n, d, d))
    for k in range(n):
        t = work.tails(k, P.p1, P.p2)
        f1[k] = _sym(t["cc"] + xiv[k].T @ t["dc"] + t["dc"].T @ xiv[k]
                     + xiv[k].T @ t["dd"] @ xiv[k])
        gam_k = gpt[k:, k]
        mix = t["dc"] + t["dd"] @ xiv[k]
        f2[k:, k] = t["pa"] + np.matmul(t["pb"], xiv[k]) \
            + np.einsum("iba,bc->iac", gam_k, mix)
        btp = np.swapaxes(t["pb"], -1, -2)
        f3[k:, k:, k] = (np.einsum("iba,jbc->ijac", gam_k, btp)
                         + np.einsum("iab,jbc->ijac", t["pb"], gam_k)
                         + np.einsum("iba,bc,jcd->ijad", gam_k, t["dd"], gam_k))
    rhs = rhs_from_gains(xi, gamma, p)
    q3 = np.zeros((n, n, n, d, d))
    for k in range(n):
        gk = gpt[k:, k]
        q3[k:, k:, k] = np.einsum("iba,bc,jcd->ijad", gk, p.R.values[k], gk)
    rhs = LyapunovRHS(q1=rhs.q1, q2=rhs.q2, q3=q3)
    return (MatrixField(grid, f1), TriangleKernel.from_samples(grid, f2), f3, rhs)


def lyapunov_residual(P: PiPair, xi: MatrixField, gamma: TriangleKernel,
                      rhs: LyapunovRHS, p: Problem) -> dict:
    """Max residuals of the three defining relations at a candidate P."""
    f1, f2, f3, _ = gain_coefficients(xi, gamma, P, p)
    n = p.grid.n_nodes
    h = p.grid.step
    r1 = float(np.abs(P.p1 - f1.values - rhs.q1).max())
    r2 = 0.0
    f2pt = f2.point_table()
    for k in range(n):
        r2 = max(r2, float(np.abs(P.p2[k:, k, k] - f2pt[k:, k] - rhs.q2[k:, k]).max()))
    r3 = 0.0
    for k in range(n - 1):
        # backward difference of P2 in t plus (F3 + Q3) vanishes
        diff = (P.p2[k + 1 :, k + 1 :, k + 1] - P.p2[k + 1 :, k + 1 :, k]) / h
        rhs_slab = f3[k + 1 :, k + 1 :, k] + rhs.q3_level(k)[1:, 1:]
        r3 = max(r3, float(np.abs(diff + rhs_slab).max()))
    return {"p1": r1, "boundary": r2, "interior": r3}


def quadratic_form(P: PiPair, t0: int, x: MatrixField) -> float:
    """int_{t0}^T <P1 x, x> + double integral of <P2(., ., t0) x, x> on the grid."""
    grid = P.grid
    n = grid.n_nodes
    if not 0 <= t0 <= n - 1:
        raise InvalidArgumentError(f"t0 index {t0} out of range")
    h = grid.step
    xv = x.values[:, :, 0]
    sl = slice(t0, n - 1)
    term1 = h * np.einsum("ia,iab,ib->", xv[sl], P.p1[sl], xv[sl])
    term2 = h * h * np.einsum("ia,ijab,jb->", xv[sl], P.p2[sl, sl, t0], xv[sl])
    return float(term1 + term2)
