"""Classical LQ Riccati ODE oracle and the SDE-reduction cross-check.

When every kernel is constant in its first argument and the free term is a
constant vector, the integral dynamics collapse to a controlled SDE whose
optimal value is <Pi(t0) x0, x0> with Pi solving the matrix Riccati ODE

    -dPi/dt = Q + A'Pi + Pi A + C'Pi C
              - (S + B'Pi + D'Pi C)' (R + D'Pi D)^{-1} (S + B'Pi + D'Pi C)

backward from Pi(T) = 0 (purely running cost).  Comparing this against the
aggregated quadratic form of the Volterra solver gives an end-to-end oracle
with a known first-order convergence rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NotSDEReducibleError, OracleFailureError
from .fields import MatrixField, Problem, build_problem, _sym
from .lyapunov import quadratic_form
from .riccati import kleinman_solve
from .timegrid import TimeGrid


@dataclass
class SDEProblem:
    """Node-sampled SDE coefficients with zero terminal weight."""

    grid: TimeGrid
    a_bar: MatrixField
    b_bar: MatrixField
    c_bar: MatrixField
    d_bar: MatrixField
    Q: MatrixField
    S: MatrixField
    R: MatrixField


def _interp(field: MatrixField, t: float) -> np.ndarray:
    """Linear interpolation of node samples (exact for constant fields)."""
    grid = field.grid
    pos = np.clip(t / grid.step, 0.0, grid.n_steps)
    lo = int(np.floor(pos))
    hi = min(lo + 1, grid.n_steps)
    w = pos - lo
    return (1.0 - w) * field.values[lo] + w * field.values[hi]


def riccati_ode(sde: SDEProblem) -> np.ndarray:
    """Backward RK4 integration of the Riccati ODE on the grid; Pi(T) = 0."""
    grid = sde.grid
    n = grid.n_nodes
    d = sde.a_bar.rows
    h = grid.step

    def rate(t: float, pi: np.ndarray) -> np.ndarray:
        a = _interp(sde.a_bar, t)
        b = _interp(sde.b_bar, t)
        c = _interp(sde.c_bar, t)
        dd = _interp(sde.d_bar, t)
        q = _interp(sde.Q, t)
        s = _interp(sde.S, t)
        r = _interp(sde.R, t)
        m = _sym(r + dd.T @ pi @ dd)
        cross = s + b.T @ pi + dd.T @ pi @ c
        eigs = np.linalg.eigvalsh(m)
        if eigs.min() <= 1e-12 * max(abs(eigs).max(), 1.0):
            raise OracleFailureError(
                f"R + D'Pi D singular at t = {t:.6f} (min eig {eigs.min():.3e})")
        gain = np.linalg.solve(m, cross)
        return _sym(q + a.T @ pi + pi @ a + c.T @ pi @ c - cross.T @ gain)

    pi = np.zeros((n, d, d))
    for k in range(n - 1, 0, -1):
        t1 = grid.nodes[k]
        p1 = pi[k]
        k1 = rate(t1, p1)
        k2 = rate(t1 - 0.5 * h, p1 + 0.5 * h * k1)
        k3 = rate(t1 - 0.5 * h, p1 + 0.5 * h * k2)
        k4 = rate(t1 - h, p1 + h * k3)
        pi[k - 1] = _sym(p1 + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
    return pi


def _column_values(kernel, name: str, tol: float = 1e-10) -> np.ndarray:
    """Extract K(., t_j) for a kernel constant in its first argument."""
    grid = kernel.grid
    n = grid.n_nodes
    if kernel.family == "zero":
        return np.zeros((n, kernel.rows, kernel.cols))
    if kernel.family == "constant":
        return np.broadcast_to(kernel.coef, (n,) + kernel.coef.shape).copy()
    if kernel.family == "fractional":
        raise NotSDEReducibleError(
            f"kernel {name} is singular fractional, not constant in its first argument")
    pt = kernel.point_table()
    scale = max(np.abs(pt).max(), 1.0)
    out = np.empty((n, kernel.rows, kernel.cols))
    for j in range(n):
        col = pt[j:, j]
        if np.abs(col - col[0]).max() > tol * scale:
            raise NotSDEReducibleError(
                f"kernel {name} varies in its first argument (column {j})")
        out[j] = col[0]
    return out


def sde_problem_from_volterra(p: Problem) -> tuple[SDEProblem, np.ndarray]:
    """Collapse an SDE-reducible Volterra problem; returns (sde, x0).

    Preconditions: kernels constant in the first argument, zero inhomogeneous
    terms, constant free term.
    """
    for name, ker in (("b", p.b), ("sigma", p.sigma)):
        if not ker.is_zero:
            raise NotSDEReducibleError(f"inhomogeneous term {name} must vanish")
    for name, fld in (("q", p.q), ("rho", p.rho)):
        if fld.values.any():
            raise NotSDEReducibleError(f"inhomogeneous term {name} must vanish")
    xv = p.x.values
    if np.abs(xv - xv[0]).max() > 1e-12 * max(np.abs(xv).max(), 1.0):
        raise NotSDEReducibleError("free term must be a constant vector")
    sde = SDEProblem(
        grid=p.grid,
        a_bar=MatrixField(p.grid, _column_values(p.A, "A")),
        b_bar=MatrixField(p.grid, _column_values(p.B, "B")),
        c_bar=MatrixField(p.grid, _column_values(p.C, "C")),
        d_bar=MatrixField(p.grid, _column_values(p.D, "D")),
        Q=p.Q, S=p.S, R=p.R,
    )
    return sde, xv[0]


@dataclass
class ReductionEntry:
    t0_index: int
    t0: float
    value_volterra: float
    value_ode: float
    rel_error: float
    rel_error_refined: float | None = None
    order: float | None = None


@dataclass
class ReductionReport:
    entries: list
    max_rel_error: float
    passed: bool
    tol: float

    def as_dict(self) -> dict:
        return {
            "passed": bool(self.passed),
            "tol": self.tol,
            "max_rel_error": self.max_rel_error,
            "entries": [vars(e) for e in self.entries],
        }


def sde_reduction_compare(p: Problem, tol: float = 0.02,
                          t0_fractions=(0.0, 0.25, 0.5),
                          refine: bool = True, **solve_kwargs) -> ReductionReport:
    """Aggregated Volterra value against the Riccati ODE value.

    Solves the Volterra problem at N (and, when the problem carries its
    configuration, at 2N) and compares the quadratic form at a few start
    times with <Pi(t0) x0, x0>; reports relative errors and the empirical
    convergence order.
    """
    sde, x0 = sde_problem_from_volterra(p)
    pi = riccati_ode(sde)
    sol = kleinman_solve(p, **solve_kwargs)
    x = MatrixField.constant(p.grid, x0)
    n = p.grid.n_steps

    refined = None
    if refine and p.config is not None:
        cfg = dict(p.config)
        cfg["steps"] = 2 * n
        inp = dict(cfg.get("input", {}))
        inp["t0_index"] = 2 * int(inp.get("t0_index", 0))
        cfg["input"] = inp
        p2 = build_problem(cfg)
        sol2 = kleinman_solve(p2, **solve_kwargs)
        sde2, _ = sde_problem_from_volterra(p2)
        pi2 = riccati_ode(sde2)
        x2 = MatrixField.constant(p2.grid, x0)
        refined = (p2, sol2, pi2, x2)

    entries = []
    for frac in t0_fractions:
        k0 = int(round(frac * n))
        if k0 >= n:
            raise InvalidArgumentError(f"t0 fraction {frac} has empty horizon")
        val_v = quadratic_form(sol.P, k0, x)
        val_o = float(x0[:, 0] @ pi[k0] @ x0[:, 0])
        scale = max(abs(val_o), 1e-300)
        rel = abs(val_v - val_o) / scale
        entry = ReductionEntry(k0, p.grid.nodes[k0], val_v, val_o, rel)
        if refined is not None:
            p2, sol2, pi2, x2 = refined
            val_v2 = quadratic_form(sol2.P, 2 * k0, x2)
            val_o2 = float(x0[:, 0] @ pi2[2 * k0] @ x0[:, 0])
            rel2 = abs(val_v2 - val_o2) / max(abs(val_o2), 1e-300)
            entry.rel_error_refined = rel2
            if rel2 > 0.0 and rel > 0.0:
                entry.order = float(np.log2(rel / rel2))
        entries.append(entry)
    max_rel = max(e.rel_error for e in entries)
    return ReductionReport(entries, max_rel, max_rel <= tol, tol)
