"""Brute-force quadrature oracles shared by the acceptance battery.

These re-implement the discrete rules with explicit loops, independently of
the vectorized library code.
"""

import numpy as np

from volterra_lq.fields import PiPair, TriangleKernel
from volterra_lq.timegrid import make_grid


def random_instance(rng, n=16, d=2):
    grid = make_grid(1.0, n)
    nn = grid.n_nodes
    p1 = rng.normal(size=(nn, d, d))
    p1 = 0.5 * (p1 + np.swapaxes(p1, -1, -2))
    p2 = np.zeros((nn, nn, nn, d, d))
    for k in range(nn):
        p2[k:, k:, k] = rng.normal(size=(nn - k, nn - k, d, d))
    P = PiPair(grid, p1, p2).symmetrized()
    M1 = TriangleKernel.from_samples(grid, rng.normal(size=(nn, nn, 3, d)))
    M2 = TriangleKernel.from_samples(grid, rng.normal(size=(nn, nn, d, 1)))
    return grid, P, M1, M2


def brute_rint_ref(P, M):
    grid = P.grid
    n = grid.n_nodes
    h = grid.step
    pt = M.point_table()
    out = np.zeros((n, n, P.dim, M.cols))
    for k in range(n):
        for i in range(k, n):
            acc = P.p1[i] @ pt[i, k]
            for j in range(k, n - 1):
                acc = acc + P.p2[i, j, k] @ (h * pt[j, k])
            out[i, k] = acc
    return out


def brute_sandwich_ref(M1, P, M2):
    grid = P.grid
    n = grid.n_nodes
    h = grid.step
    pt1, pt2 = M1.point_table(), M2.point_table()
    out = np.zeros((n, M1.rows, M2.cols))
    for k in range(n):
        acc = np.zeros((M1.rows, M2.cols))
        for i in range(k, n - 1):
            acc = acc + h * (pt1[i, k] @ P.p1[i] @ pt2[i, k])
        for i in range(k, n - 1):
            for j in range(k, n - 1):
                acc = acc + (h * pt1[i, k]) @ P.p2[i, j, k] @ (h * pt2[j, k])
        out[k] = acc
    return out
