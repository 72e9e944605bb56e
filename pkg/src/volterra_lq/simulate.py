"""Monte Carlo simulation of the controlled dynamics under causal feedback.

Euler-Maruyama over the shared grid: the forward-state column Theta(., t_k)
is carried per path and extended by one kernel-weighted increment per step,
the state is read off its diagonal, and the control applies the feedback law

    u(t) = Xi(t) X(t) + int_t^T Gamma(s, t) Theta(s, t) ds + v(t).

Randomness is counter-based: path p of a batch draws its Brownian increments
from an independent Philox stream keyed by (seed, p), so results are
bit-reproducible for identical inputs regardless of scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ebsvie import ebsvie_for_strategy
from .errors import InvalidArgumentError
from .fields import MatrixField, PiPair, Problem, Strategy, TriangleKernel
from .lyapunov import rhs_from_gains, solve_lyapunov
from .riccati import _gain_fields
from .volterra_ops import mean_state


def brownian_increments(seed: int, n_paths: int, n_steps: int, h: float) -> np.ndarray:
    """Per-path Philox streams keyed by (seed, path); shape (n_paths, n_steps)."""
    out = np.empty((n_paths, n_steps))
    for path in range(n_paths):
        gen = np.random.Generator(np.random.Philox(key=[int(seed), path]))
        out[path] = gen.standard_normal(n_steps)
    return out * np.sqrt(h)


@dataclass
class SimBatch:
    """One simulated batch: states, controls, per-path costs, flags."""

    n_paths: int
    seed: int
    t0: int
    grid: object
    X: np.ndarray          # (n_paths, N+1, d)
    u: np.ndarray          # (n_paths, N+1, l)
    costs: np.ndarray      # (n_paths,)
    flagged: np.ndarray    # (n_paths,) bool; non-finite paths, excluded from stats
    theta_slices: dict = field(default_factory=dict)   # level -> (n_paths, N+1, d)
    mean_theta: np.ndarray | None = None               # (N+1, N+1, d) running mean

    @property
    def n_flagged(self) -> int:
        return int(self.flagged.sum())


def _path_costs(X: np.ndarray, u: np.ndarray, p: Problem, t0: int) -> np.ndarray:
    """Grid quadrature of the quadratic running cost along each path."""
    h = p.grid.step
    sl = slice(t0, p.grid.n_nodes - 1)
    Xs, us = X[:, sl], u[:, sl]
    Qv, Sv, Rv = p.Q.values[sl], p.S.values[sl], p.R.values[sl]
    qv, rv = p.q.values[sl, :, 0], p.rho.values[sl, :, 0]
    cost = np.einsum("nka,kab,nkb->n", Xs, Qv, Xs)
    cost += np.einsum("nka,kab,nkb->n", us, Rv, us)
    cost += 2.0 * np.einsum("nka,kab,nkb->n", us, Sv, Xs)
    cost += 2.0 * np.einsum("ka,nka->n", qv, Xs)
    cost += 2.0 * np.einsum("ka,nka->n", rv, us)
    return h * cost


def simulate_closed_loop(p: Problem, strategy: Strategy, t0: int, x: MatrixField,
                         n_paths: int, seed: int, record_theta_at: tuple = (),
                         record_mean_theta: bool = False) -> SimBatch:
    """Simulate the closed-loop pair (X, Theta) and the control outcome.

    Kernel-weighted sums use exact cell integrals for family-tagged kernels
    (the diffusion part applies the cell average against each increment).
    Non-finite paths are flagged and excluded from statistics, never dropped
    silently.
    """
    if n_paths < 1:
        raise InvalidArgumentError(f"n_paths must be positive, got {n_paths}")
    grid = p.grid
    n = grid.n_nodes
    d, ell = p.d, p.ell
    h = grid.step
    if strategy.xi.rows != ell or strategy.xi.cols != d:
        raise InvalidArgumentError("strategy Xi has incompatible shape")
    if strategy.gamma.rows != ell or strategy.gamma.cols != d:
        raise InvalidArgumentError("strategy Gamma has incompatible shape")
    if not 0 <= t0 < n:
        raise InvalidArgumentError(f"t0 index {t0} out of range")

    wA = p.A.weights_second()
    wB = p.B.weights_second()
    wb = p.b.weights_second()
    avgC = p.C.weights_second() / h
    avgD = p.D.weights_second() / h
    avgsig = p.sigma.weights_second() / h
    wfG = strategy.gamma.weights_first()
    xiv = strategy.xi.values
    vv = strategy.v.values
    use = {
        "A": not p.A.is_zero, "B": not p.B.is_zero, "b": not p.b.is_zero,
        "C": not p.C.is_zero, "D": not p.D.is_zero, "sig": not p.sigma.is_zero,
        "G": not strategy.gamma.is_zero,
    }

    dW = brownian_increments(seed, n_paths, grid.n_steps, h)
    X = np.zeros((n_paths, n, d))
    u = np.zeros((n_paths, n, ell))
    theta = np.broadcast_to(x.values[:, :, 0], (n_paths, n, d)).copy()
    theta_slices = {}
    mean_theta = np.zeros((n, n, d)) if record_mean_theta else None

    for k in range(t0, n - 1):
        X[:, k] = theta[:, k]
        uk = np.einsum("ab,nb->na", xiv[k], X[:, k]) + vv[k, :, 0]
        if use["G"]:
            uk = uk + np.einsum("jab,njb->na", wfG[k, k : n - 1], theta[:, k : n - 1])
        u[:, k] = uk
        if k in record_theta_at:
            theta_slices[k] = theta.copy()
        if record_mean_theta:
            mean_theta[:, k] = theta.mean(axis=0)
        fut = slice(k + 1, n)
        if use["A"]:
            theta[:, fut] += np.einsum("iab,nb->nia", wA[fut, k], X[:, k])
        if use["B"]:
            theta[:, fut] += np.einsum("iab,nb->nia", wB[fut, k], u[:, k])
        if use["b"]:
            theta[:, fut] += wb[fut, k, :, 0]
        if use["C"] or use["D"] or use["sig"]:
            diff = np.zeros((n_paths, n - k - 1, d))
            if use["C"]:
                diff += np.einsum("iab,nb->nia", avgC[fut, k], X[:, k])
            if use["D"]:
                diff += np.einsum("iab,nb->nia", avgD[fut, k], u[:, k])
            if use["sig"]:
                diff += avgsig[fut, k, :, 0]
            theta[:, fut] += diff * dW[:, k, None, None]
    # terminal node: the Gamma tail is empty there
    X[:, n - 1] = theta[:, n - 1]
    u[:, n - 1] = np.einsum("ab,nb->na", xiv[n - 1], X[:, n - 1]) + vv[n - 1, :, 0]
    if record_mean_theta:
        mean_theta[:, n - 1] = theta.mean(axis=0)
    if (n - 1) in record_theta_at:
        theta_slices[n - 1] = theta.copy()

    costs = _path_costs(X, u, p, t0)
    flagged = ~(np.isfinite(costs)
                & np.isfinite(X.reshape(n_paths, -1)).all(axis=1))
    return SimBatch(n_paths=n_paths, seed=seed, t0=t0, grid=grid, X=X, u=u,
                    costs=costs, flagged=flagged, theta_slices=theta_slices,
                    mean_theta=mean_theta)


def estimate_cost(batch: SimBatch, p: Problem) -> tuple[float, float]:
    """Sample mean and standard error of the per-path cost (flagged excluded)."""
    keep = ~batch.flagged
    m = int(keep.sum())
    if m == 0:
        raise InvalidArgumentError("no usable paths in batch")
    costs = batch.costs[keep]
    mean = float(costs.sum() / m)
    if m == 1:
        return mean, 0.0
    var = float(np.sum((costs - mean) ** 2) / (m - 1))
    return mean, float(np.sqrt(var / m))


@dataclass
class FrechetReport:
    """Quadratic structure of mu -> J(v + mu v~) under common random numbers."""

    mus: list
    costs: list
    fit: tuple            # (c0, c1, c2) through the first three mu values
    heldout_residual: float
    linear_coeff: float
    linear_se: float
    predicted_linear: float
    quadratic_coeff: float


def _fit_quadratic(mus: np.ndarray, vals: np.ndarray) -> np.ndarray:
    V = np.vander(mus, 3, increasing=True)
    return np.linalg.solve(V, vals)


def frechet_check(p: Problem, base: Strategy, direction: MatrixField, t0: int,
                  x: MatrixField, mus, seed: int, n_paths: int = 2000,
                  P: PiPair | None = None, feedforward=None) -> FrechetReport:
    """Pathwise-quadratic cost expansion and first-order coefficient check.

    Simulates J(mu) with common random numbers for each mu, fits the exact
    quadratic through the first three values, and reports the relative
    residual at the held-out points.  The fitted linear coefficient is
    compared against the derivative formula evaluated with the pair P, the
    backward data (eta, kappa) of the base strategy, and Monte Carlo means
    of (X, Theta).
    """
    mus = [float(m) for m in mus]
    if len(set(mus)) < 4:
        raise InvalidArgumentError("need at least 4 distinct mu values")
    batches = []
    costs = []
    base_batch = None
    for mu in mus:
        strat = Strategy(base.xi, base.gamma,
                         MatrixField(p.grid, base.v.values + mu * direction.values))
        b = simulate_closed_loop(p, strat, t0, x, n_paths, seed,
                                 record_mean_theta=(mu == 0.0))
        if mu == 0.0:
            base_batch = b
        batches.append(b)
        costs.append(estimate_cost(b, p)[0])
    if base_batch is None:
        # derivative formula needs means under the unperturbed strategy
        base_batch = simulate_closed_loop(p, base, t0, x, n_paths, seed,
                                          record_mean_theta=True)
    mus_arr = np.array(mus)
    coeffs = _fit_quadratic(mus_arr[:3], np.array(costs[:3]))
    scale = max(abs(c) for c in costs) or 1.0
    heldout = max(abs(costs[i] - float(np.polyval(coeffs[::-1], mus_arr[i]))) / scale
                  for i in range(3, len(mus)))

    # pathwise linear coefficients give the Monte Carlo error of the slope
    per_path = np.stack([b.costs for b in batches[:3]], axis=1)
    V = np.vander(mus_arr[:3], 3, increasing=True)
    path_coeffs = np.linalg.solve(V, per_path.T)  # (3, n_paths)
    lin = path_coeffs[1]
    keep = ~batches[0].flagged
    lin = lin[keep]
    linear_coeff = float(coeffs[1])
    linear_se = float(lin.std(ddof=1) / np.sqrt(lin.size)) if lin.size > 1 else 0.0

    predicted = _predicted_linear(p, base, direction, t0, base_batch, P, feedforward)
    return FrechetReport(mus=mus, costs=costs, fit=tuple(coeffs),
                         heldout_residual=float(heldout),
                         linear_coeff=linear_coeff, linear_se=linear_se,
                         predicted_linear=predicted,
                         quadratic_coeff=float(coeffs[2]))


def _predicted_linear(p: Problem, base: Strategy, direction: MatrixField, t0: int,
                      base_batch: SimBatch, P: PiPair | None, feedforward) -> float:
    """2 E int <{(S + D'PC + M Xi) X + int ((B'P) + M Gamma) Theta + kappa + M v}, v~> dt

    with Monte Carlo means standing in for the expectations."""
    if P is None:
        rhs = rhs_from_gains(base.xi, base.gamma, p)
        P = solve_lyapunov(base.xi, base.gamma, rhs, p)
    if feedforward is None:
        feedforward = ebsvie_for_strategy(P, base, p)
    kappa = feedforward.kappa.values
    gf = _gain_fields(P, p)
    m_vals, cross, btp = gf["m"], gf["cross"], gf["btp"]
    n = p.grid.n_nodes
    h = p.grid.step
    mean_x = base_batch.X.mean(axis=0)[:, :, None]
    mean_th = base_batch.mean_theta  # (N+1, N+1, d), columns by level
    gpt = base.gamma.point_table()
    total = 0.0
    for k in range(t0, n - 1):
        grad = (cross[k] + m_vals[k] @ base.xi.values[k]) @ mean_x[k]
        inner = btp[k : n - 1, k] + np.einsum("ab,ibc->iac", m_vals[k], gpt[k : n - 1, k])
        grad = grad + h * np.einsum("iab,ib->a", inner, mean_th[k : n - 1, k])[:, None]
        grad = grad + kappa[k] + m_vals[k] @ base.v.values[k]
        total += h * float(grad[:, 0] @ direction.values[k, :, 0])
    return 2.0 * total


@dataclass
class DualityReport:
    lhs: float
    rhs: float
    residual: float


def duality_check(xi: MatrixField, gamma: TriangleKernel, chi: TriangleKernel,
                  psi: MatrixField, v: MatrixField, t0: int, x: MatrixField,
                  p: Problem) -> DualityReport:
    """Deterministic two-pipeline evaluation of the duality identity.

    The left side pairs (psi, chi) with the mean closed-loop pair from
    :func:`mean_state`; the right side pairs the backward solution eta with
    the free term, the drift inhomogeneity b, and the feedforward v.  The
    relative residual is O(h) and halves when the grid is refined.
    """
    from .ebsvie import solve_ebsvie

    grid = p.grid
    n = grid.n_nodes
    h = grid.step
    mean_x, mean_th = mean_state(xi, gamma, p, x, v, t0)
    tpt = mean_th.point_table()
    wfchi = chi.weights_first()
    lhs = 0.0
    for k in range(t0, n - 1):
        lhs += h * float(psi.values[k][:, 0] @ mean_x.values[k][:, 0])
        lhs += h * float(np.einsum("iac,iac->", wfchi[k, k : n - 1], tpt[k : n - 1, k]))

    eta = solve_ebsvie(xi, gamma, chi, psi, p)
    rhs = h * float(np.einsum("iac,iac->", eta.values[t0 : n - 1, t0], x.values[t0 : n - 1]))
    if not p.b.is_zero:
        wfb = p.b.weights_first()
        for k in range(t0, n - 1):
            rhs += h * float(np.einsum("jac,jac->", eta.values[k : n - 1, k],
                                       wfb[k, k : n - 1]))
    if not p.B.is_zero and v.values.any():
        wfB = p.B.weights_first()
        for k in range(t0, n - 1):
            ib = np.einsum("jba,jbc->ac", wfB[k, k : n - 1], eta.values[k : n - 1, k])
            rhs += h * float(ib[:, 0] @ v.values[k][:, 0])
    residual = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
    return DualityReport(lhs=float(lhs), rhs=float(rhs), residual=float(residual))
