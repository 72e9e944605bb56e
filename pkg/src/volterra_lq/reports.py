"""Figure rendering for the report paths (file output only, Agg backend)."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _finish(fig, path: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)) or ".", exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)


def fig_p1_profile(P, path: str):
    grid = P.grid
    d = P.dim
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    for a in range(d):
        for b in range(a, d):
            ax.plot(grid.nodes, P.p1[:, a, b], label=f"P1[{a},{b}]")
    ax.set_xlabel("t")
    ax.set_ylabel("P1 entries")
    ax.set_title("Pointwise component of the solution pair")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    _finish(fig, path)


def fig_min_eig_profile(report, grid, path: str):
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.plot(grid.nodes, report.min_eig_profile, color="tab:red")
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("min eig of R + D'PD")
    ax.set_title(f"Coercivity profile (lambda = {report.lambda_min:.4g})")
    ax.grid(alpha=0.3)
    _finish(fig, path)


def fig_feedforward(v_hat, path: str):
    grid = v_hat.grid
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    for a in range(v_hat.rows):
        ax.plot(grid.nodes, v_hat.values[:, a, 0], label=f"v[{a}]")
    ax.set_xlabel("t")
    ax.set_ylabel("feedforward")
    ax.set_title("Optimal feedforward control")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    _finish(fig, path)


def fig_gamma_heatmap(gamma, path: str):
    pt = gamma.point_table()
    mag = np.linalg.norm(pt, axis=(2, 3))
    fig, ax = plt.subplots(figsize=(4.8, 4.2))
    im = ax.imshow(mag, origin="lower", aspect="equal", cmap="viridis")
    ax.set_xlabel("second node (t)")
    ax.set_ylabel("first node (s)")
    ax.set_title("|Gamma(s, t)| on the triangle")
    fig.colorbar(im, ax=ax, shrink=0.85)
    _finish(fig, path)


def fig_iterates(iterate_log, path: str):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.4, 3.4))
    its = [rec["iteration"] for rec in iterate_log]
    deltas = [max(rec["gain_delta"], 1e-300) for rec in iterate_log]
    ax1.semilogy(its, deltas, marker="o")
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("gain change")
    ax1.set_title("Gain iteration convergence")
    ax1.grid(alpha=0.3)
    forms = np.array([rec["probe_forms"] for rec in iterate_log])
    for j in range(forms.shape[1]):
        ax2.plot(its, forms[:, j], marker=".", label=f"probe {j}")
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("quadratic form")
    ax2.set_title("Monotone probe values")
    ax2.grid(alpha=0.3)
    ax2.legend(fontsize=7, loc="best")
    _finish(fig, path)


def fig_convergence(ns, errors, path: str, title: str = "Refinement study"):
    fig, ax = plt.subplots(figsize=(5.2, 3.8))
    ns = np.asarray(ns, dtype=float)
    errors = np.asarray(errors, dtype=float)
    ax.loglog(ns, np.maximum(errors, 1e-300), marker="o", label="measured")
    guide = errors[0] * ns[0] / ns
    ax.loglog(ns, guide, ls="--", color="gray", label="order 1")
    ax.set_xlabel("N")
    ax.set_ylabel("relative error")
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, which="both")
    _finish(fig, path)
