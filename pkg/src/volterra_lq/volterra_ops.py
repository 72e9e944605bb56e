"""Kernel algebra for Pi-pairs: one-sided products, sandwiches, resolvents.

The three operations combine the pointwise action of P1 with tail
integration against P2:

    rint:     (P <> M)(s, t)  = P1(s) M(s, t) + int_t^T P2(s, r, t) M(r, t) dr
    lint:     (M <> P)(s, t)  = M(s, t) P1(s) + int_t^T M(r, t) P2(r, s, t) dr
    sandwich: (M1 <> P <> M2)(t) = int_t^T M1 P1 M2 ds
                                 + int_t^T int_t^T M1(s1,t) P2(s1,s2,t) M2(s2,t) ds1 ds2

Tail integrals use the left-endpoint rule; family-tagged kernels contribute
exact cell moments so singular factors stay integrable.  lint is realized as
the transpose of rint, which makes the adjoint identity exact on the grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .fields import MatrixField, PiPair, TriangleKernel, pair_profile_table
from .timegrid import TimeGrid


def _shape_check(cond: bool, msg: str):
    if not cond:
        raise InvalidArgumentError(msg)


def _rint_level(p1: np.ndarray, p2: np.ndarray, k: int,
                pt: np.ndarray, wf: np.ndarray) -> np.ndarray:
    """Level-k slab of (P <> M): out[i] for i in [k, N], given M's tables."""
    n1 = p1.shape[0]
    out = np.matmul(p1[k:], pt[k:, k])
    if k < n1 - 1:
        out += np.einsum("ijab,jbc->iac", p2[k:, k : n1 - 1, k], wf[k, k : n1 - 1])
    return out


class SandwichPlan:
    """Precomputed quadrature data for one (M1, P, M2) sandwich pair."""

    def __init__(self, m1: TriangleKernel, m2: TriangleKernel):
        _shape_check(m1.cols == m2.rows, "sandwich: inner dimensions must agree")
        self.m1 = m1
        self.m2 = m2
        self.grid = m1.grid
        self.out_shape = (m1.rows, m2.cols)
        self.is_zero = m1.is_zero or m2.is_zero
        self.pair = None if self.is_zero else pair_profile_table(m1, m2)
        if not self.is_zero:
            self.w1 = m1.weights_first()
            self.w2 = m2.weights_first()
            self.pt1 = m1.point_table()
            self.pt2 = m2.point_table()

    def single(self, k: int, p1: np.ndarray) -> np.ndarray:
        """int_t^T M1(s,t) P1(s) M2(s,t) ds at t = t_k; p1 is the full P1 array."""
        nc = p1.shape[0] - 1  # cells run over i = k .. N-1
        if self.is_zero or k >= nc:
            return np.zeros(self.out_shape)
        sl = slice(k, nc)
        if self.pair is not None:
            core = np.tensordot(self.pair[k, sl], p1[sl], axes=(0, 0))
            return self.m1.coef @ core @ self.m2.coef
        if self.m1.family == "sampled" and self.m2.family == "sampled":
            return self.grid.step * np.einsum(
                "iab,ibc,icd->ad", self.pt1[sl, k], p1[sl], self.pt2[sl, k])
        if self.m1.family == "sampled":
            return np.einsum("iab,ibc,icd->ad", self.pt1[sl, k], p1[sl], self.w2[k, sl])
        return np.einsum("iab,ibc,icd->ad", self.w1[k, sl], p1[sl], self.pt2[sl, k])

    def double(self, k: int, p2: np.ndarray) -> np.ndarray:
        """Double tail integral against P2 at level k; p2 is the full array."""
        nc = p2.shape[0] - 1
        if self.is_zero or k >= nc:
            return np.zeros(self.out_shape)
        sl = slice(k, nc)
        return np.einsum("iab,ijbc,jcd->ad",
                         self.w1[k, sl], p2[sl, sl, k], self.w2[k, sl])

    def value(self, k: int, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
        return self.single(k, p1) + self.double(k, p2)


def rint(P: PiPair, M: TriangleKernel) -> TriangleKernel:
    """(P <> M) as a sampled kernel on the closed triangle."""
    _shape_check(M.rows == P.dim, f"rint: kernel rows {M.rows} != state dim {P.dim}")
    n = P.grid.n_nodes
    out = np.zeros((n, n, P.dim, M.cols))
    pt, wf = M.point_table(), M.weights_first()
    for k in range(n):
        out[k:, k] = _rint_level(P.p1, P.p2, k, pt, wf)
    return TriangleKernel.from_samples(P.grid, out)


def lint(M: TriangleKernel, P: PiPair) -> TriangleKernel:
    """(M <> P), realized as rint(P, M^T)^T so the adjoint identity is exact."""
    _shape_check(M.cols == P.dim, f"lint: kernel cols {M.cols} != state dim {P.dim}")
    return rint(P, M.transpose()).transpose()


def sandwich(M1: TriangleKernel, P: PiPair, M2: TriangleKernel,
             symmetrize: bool = False) -> MatrixField:
    """(M1 <> P <> M2) as a matrix field; optionally symmetrized.

    Pass ``symmetrize=True`` when M1 = M2^T so quadrature round-off cannot
    break the symmetry the continuous operator guarantees.
    """
    _shape_check(M1.cols == P.dim and M2.rows == P.dim,
                 "sandwich: shapes must be (c1 x d), (d x d), (d x c2)")
    plan = SandwichPlan(M1, M2)
    n = P.grid.n_nodes
    vals = np.zeros((n,) + plan.out_shape)
    for k in range(n):
        vals[k] = plan.value(k, P.p1, P.p2)
    if symmetrize:
        vals = 0.5 * (vals + np.swapaxes(vals, -1, -2))
    return MatrixField(P.grid, vals)


# -- resolvents ---------------------------------------------------------------


def _resolvent_from_weights(wsec: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Discrete resolvent values F[m, j] from second-argument cell weights.

    F is defined so that the variation-of-constants formula
    ``X(m) = g(m) + sum_j h F[m, j] g(j)`` is the exact solution operator of
    the discrete Volterra recursion ``X(m) = g(m) + sum_c Wsec[m, c] X(c)``.
    Columns are filled by forward substitution in the gap m - j.
    """
    n = grid.n_nodes
    r = wsec.shape[2]
    h = grid.step
    F = np.zeros((n, n, r, r))
    for g in range(1, n):
        j = np.arange(0, n - g)
        m = j + g
        acc = wsec[m, j] / h
        for e in range(1, g):
            acc = acc + np.matmul(wsec[m, j + e], F[j + e, j])
        F[m, j] = acc
    return F


def resolvent(K: TriangleKernel) -> TriangleKernel:
    """Resolvent of a square kernel: F = K + int_s^t K(t, r) F(r, s) dr.

    The discrete scheme solves the defining relation exactly (forward
    substitution in the gap t - s), so the variation-of-constants formula
    with F inverts the forward Volterra recursion without extra error.
    """
    _shape_check(K.rows == K.cols, "resolvent needs a square-shaped kernel")
    F = _resolvent_from_weights(K.weights_second(), K.grid)
    return TriangleKernel.from_samples(K.grid, F)


def resolvent_residual(K: TriangleKernel, F: TriangleKernel) -> float:
    """Max residual of the discrete defining equation of the resolvent."""
    n = K.grid.n_nodes
    h = K.grid.step
    wk = K.weights_second()
    fv = F.point_table()
    res = 0.0
    for m in range(n):
        for j in range(m):
            acc = wk[m, j] / h
            for c in range(j + 1, m):
                acc = acc + wk[m, c] @ fv[c, j]
            res = max(res, float(np.abs(fv[m, j] - acc).max()))
    return res


# -- deterministic mean flow ----------------------------------------------------


@dataclass
class MeanFlow:
    """Stacked closed-loop kernel and its resolvent for the mean dynamics.

    ``stacked`` is the (d + l)-square kernel of the coupled
    (mean state, mean control) Volterra system under the gains (Xi, Gamma),
    stored through its cell averages; ``resolvent`` is its discrete resolvent.
    The prism kernels G1, G2 of the mean representation derive from these via
    :func:`mean_flow_kernels`.
    """

    grid: TimeGrid
    dim_x: int
    dim_u: int
    stacked: TriangleKernel
    resolvent: TriangleKernel


def _stacked_weights(xi: MatrixField, gamma: TriangleKernel, p) -> np.ndarray:
    """Second-argument cell weights of the stacked closed-loop kernel."""
    n = p.grid.n_nodes
    d, ell = p.d, p.ell
    wA = p.A.weights_second()
    wB = p.B.weights_second()
    xiv = xi.values
    W = np.zeros((n, n, d + ell, d + ell))
    W[:, :, :d, :d] = wA
    W[:, :, :d, d:] = wB
    # bottom blocks: Xi(t) K(t, s) + int_t^T Gamma(r, t) K(r, s) dr, cell-integrated in s
    bl = np.einsum("mab,mcbe->mcae", xiv, wA)
    br = np.einsum("mab,mcbe->mcae", xiv, wB)
    if not gamma.is_zero:
        wfG = gamma.weights_first()
        bl += np.einsum("mjab,jcbe->mcae", wfG, wA)
        br += np.einsum("mjab,jcbe->mcae", wfG, wB)
    W[:, :, d:, :d] = bl
    W[:, :, d:, d:] = br
    strict = np.arange(n)[None, :] < np.arange(n)[:, None]
    return np.where(strict[:, :, None, None], W, 0.0)


def build_mean_flow(xi: MatrixField, gamma: TriangleKernel, p) -> MeanFlow:
    """Assemble the stacked kernel and its resolvent for the gains (xi, gamma)."""
    W = _stacked_weights(xi, gamma, p)
    grid = p.grid
    stacked = TriangleKernel.from_samples(grid, W / grid.step)
    Fv = _resolvent_from_weights(W, grid)
    return MeanFlow(grid, p.d, p.ell, stacked, TriangleKernel.from_samples(grid, Fv))


def mean_flow_kernels(flow: MeanFlow, p, xi: MatrixField) -> tuple[np.ndarray, np.ndarray]:
    """Prism kernels G1[s, t, theta] (d x d) and G2[s, t, theta] (d x l).

    These are the kernels of the mean representation

        E[Theta(s, t)] = x(s) + int_{t0}^t {G1(s,t,th) x(th) + G2(s,t,th) w(th)} dth

    with w the control-side inhomogeneity; they cost O(N^3) storage and are
    intended for verification at small N.
    """
    n = flow.grid.n_nodes
    d, ell = flow.dim_x, flow.dim_u
    h = flow.grid.step
    wA = p.A.weights_second()
    wB = p.B.weights_second()
    Fv = flow.resolvent.point_table()
    G1 = np.zeros((n, n, n, d, d))
    G2 = np.zeros((n, n, n, d, ell))
    for theta in range(n):
        gt1 = np.zeros((n, d, d))
        gt2 = np.zeros((n, d, ell))
        for t in range(theta, n):
            if t == theta:
                gt1 = wA[:, theta] / h
                gt2 = wB[:, theta] / h
            else:
                c = t - 1
                gt1 = gt1 + wA[:, c] @ Fv[c, theta, :d, :d] + wB[:, c] @ Fv[c, theta, d:, :d]
                gt2 = gt2 + wA[:, c] @ Fv[c, theta, :d, d:] + wB[:, c] @ Fv[c, theta, d:, d:]
            G1[:, t, theta] = gt1
            G2[:, t, theta] = gt2
        G1[:, :, theta] += G2[:, :, theta] @ xi.values[theta]
    return G1, G2


def mean_state(xi: MatrixField, gamma: TriangleKernel, p, x: MatrixField,
               v_bar: MatrixField, t0: int) -> tuple[MatrixField, TriangleKernel]:
    """Deterministic means of the closed-loop pair (X, Theta).

    Solves the stacked mean Volterra system through the resolvent
    variation-of-constants formula, then reads the forward-state mean off the
    state/control history.  The deterministic drift inhomogeneity b is taken
    from ``p``; diffusion terms have zero mean and drop out.  Entries at
    nodes before ``t0`` are zero.
    """
    grid = p.grid
    n = grid.n_nodes
    d, ell = p.d, p.ell
    h = grid.step
    _shape_check(x.rows == d and x.cols == 1, "mean_state: x must be a d x 1 field")
    _shape_check(v_bar.rows == ell and v_bar.cols == 1, "mean_state: v_bar must be l x 1")
    if not 0 <= t0 < n:
        raise InvalidArgumentError(f"t0 index {t0} out of range")

    flow = build_mean_flow(xi, gamma, p)
    xv = x.values

    # beta1[j, m] = int_{t0}^{t_m} b(t_j, r) dr (discrete, exact cell moments)
    beta1 = np.zeros((n, n, d, 1))
    if not p.b.is_zero:
        Wb = p.b.weights_second()
        cums = np.cumsum(Wb, axis=1)
        beta1[:, 1:] = cums[:, :-1]
        if t0 > 0:
            beta1 -= cums[:, t0 - 1][:, None]
        beta1[:, : t0 + 1] = 0.0
    diag = np.arange(n)
    beta1_diag = beta1[diag, diag]

    g = np.zeros((n, d + ell, 1))
    g[:, :d] = xv + beta1_diag
    g[:, d:] = np.matmul(xi.values, xv + beta1_diag) + v_bar.values
    if not gamma.is_zero:
        wfG = gamma.weights_first()
        g[:, d:] += np.einsum("mjab,jbc->mac", wfG, xv)
        if not p.b.is_zero:
            g[:, d:] += np.einsum("mjab,jmbc->mac", wfG, beta1)

    Fv = flow.resolvent.point_table()
    big = np.zeros((n, d + ell, 1))
    for m in range(t0, n):
        acc = g[m].copy()
        if m > t0:
            acc += h * np.einsum("cab,cbe->ae", Fv[m, t0:m], g[t0:m])
        big[m] = acc
    xbar = big[:, :d]
    ubar = big[:, d:]

    wA = p.A.weights_second()
    wB = p.B.weights_second()
    wb = p.b.weights_second() if not p.b.is_zero else None
    theta = np.zeros((n, n, d, 1))
    run = xv.copy()
    theta[:, t0] = run
    for k in range(t0 + 1, n):
        run = run + wA[:, k - 1] @ xbar[k - 1] + wB[:, k - 1] @ ubar[k - 1]
        if wb is not None:
            run = run + wb[:, k - 1]
        theta[:, k] = run
    ii, kk = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    theta = np.where((ii >= kk)[:, :, None, None], theta, 0.0)
    theta[:, :t0] = 0.0
    mask = (np.arange(n) >= t0)[:, None, None]
    mean_x = MatrixField(grid, np.where(mask, xbar, 0.0))
    return mean_x, TriangleKernel.from_samples(grid, theta)
