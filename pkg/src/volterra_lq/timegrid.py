"""Uniform time grids and product-integration quadrature.

All Volterra integrals in this package are discretized with the
left-endpoint piecewise-constant rule: an integral

    int_0^{t_m} K(t_m, s) f(s) ds

is approximated by ``sum_j w(m, j) f(t_j)`` where ``w(m, j)`` is the exact
cell integral of the kernel over ``[t_j, t_{j+1}]``.  Exact cell moments
keep weakly singular kernels (the fractional family ``c (t-s)^(alpha-1)``)
integrable without any diagonal regularization: K(t, t) is never sampled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, KernelNotSquareIntegrableError

#: kernel-family tags understood by the quadrature routines
CONSTANT = "constant"
FRACTIONAL = "fractional"


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, T] with N cells and N + 1 nodes."""

    horizon: float
    n_steps: int
    step: float
    nodes: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1


def make_grid(horizon: float, n_steps: int) -> TimeGrid:
    """Build the uniform grid t_k = k T / N, k = 0..N.

    Parameters
    ----------
    horizon : float
        Terminal time T > 0.
    n_steps : int
        Number of cells N >= 2.
    """
    horizon = float(horizon)
    n_steps = int(n_steps)
    if not np.isfinite(horizon) or horizon <= 0.0:
        raise InvalidArgumentError(f"horizon must be positive and finite, got {horizon}")
    if n_steps < 2:
        raise InvalidArgumentError(f"n_steps must be at least 2, got {n_steps}")
    nodes = np.linspace(0.0, horizon, n_steps + 1)
    return TimeGrid(horizon, n_steps, horizon / n_steps, nodes)


def check_family(kind: str, alpha=None) -> float:
    """Validate a kernel-family tag and return the effective exponent.

    The constant family is the fractional family with alpha = 1; the
    fractional family requires alpha in (1/2, 1] so that the kernel is
    square integrable on the triangle.
    """
    if kind == CONSTANT:
        return 1.0
    if kind == FRACTIONAL:
        if alpha is None:
            raise InvalidArgumentError("fractional family needs an exponent alpha")
        alpha = float(alpha)
        if alpha <= 0.5:
            raise KernelNotSquareIntegrableError(
                f"fractional kernel needs alpha > 1/2 for square integrability, got {alpha}"
            )
        if alpha > 1.0:
            raise InvalidArgumentError(f"fractional family is restricted to alpha <= 1, got {alpha}")
        return alpha
    raise InvalidArgumentError(f"unknown kernel family {kind!r}")


def gap_moments(alpha: float, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Exact moments int_lo^hi tau^(alpha-1) d tau, elementwise.

    ``lo`` and ``hi`` must be nonnegative; alpha = 1 reduces to hi - lo.
    """
    if alpha == 1.0:
        return hi - lo
    lo = np.maximum(lo, 0.0)
    hi = np.maximum(hi, 0.0)
    return (hi**alpha - lo**alpha) / alpha


@dataclass(frozen=True)
class WeightTable:
    """Product-integration weights w(m, j), j < m, for one scalar kernel.

    ``weights[m, j]`` approximates the contribution of cell ``[t_j, t_{j+1}]``
    to ``int_0^{t_m} K(t_m, s) f(s) ds`` for piecewise-constant f, and equals
    the exact cell integral of the kernel.
    """

    grid: TimeGrid
    weights: np.ndarray

    def apply(self, m: int, samples: np.ndarray):
        """sum_j w(m, j) samples[j] over cells j < m."""
        samples = np.asarray(samples, dtype=float)
        return np.tensordot(self.weights[m, :m], samples[:m], axes=(0, 0))


def singular_weights(grid: TimeGrid, kind: str = CONSTANT, c: float = 1.0, alpha=None) -> WeightTable:
    """Exact product-integration weights for a kernel family.

    For the constant family ``K = c`` the weights are ``c h`` exactly; for the
    fractional family ``K(t, s) = c (t - s)^(alpha - 1)``,

        w(m, j) = c ((t_m - t_j)^alpha - (t_m - t_{j+1})^alpha) / alpha.

    Raises ``KernelNotSquareIntegrableError`` when alpha <= 1/2.
    """
    a = check_family(kind, alpha)
    t = grid.nodes
    n = grid.n_steps
    # gaps[m, j] = t_m - t_j, clipped at zero below the diagonal
    gaps = np.maximum(t[:, None] - t[None, :], 0.0)
    w = c * gap_moments(a, gaps[:, 1 : n + 1], gaps[:, 0:n])
    valid = np.arange(n)[None, :] < np.arange(n + 1)[:, None]
    w = np.where(valid, w, 0.0)
    if not np.all(np.isfinite(w)):
        raise InvalidArgumentError("weight table contains non-finite entries")
    return WeightTable(grid, w)


def tail_integral(samples: np.ndarray, k: int, grid: TimeGrid):
    """Left-Riemann tail integral h * sum_{j=k}^{N-1} samples[j].

    ``samples`` holds node values indexed 0..N along the first axis; the
    result approximates ``int_{t_k}^T f(s) ds`` and is 0 when k = N.
    """
    samples = np.asarray(samples, dtype=float)
    n = grid.n_steps
    if samples.shape[0] != n + 1:
        raise InvalidArgumentError(
            f"samples must have {n + 1} node values, got {samples.shape[0]}"
        )
    if not 0 <= k <= n:
        raise InvalidArgumentError(f"start index {k} out of range [0, {n}]")
    if k == n:
        return np.zeros(samples.shape[1:]) if samples.ndim > 1 else 0.0
    return grid.step * samples[k:n].sum(axis=0)
