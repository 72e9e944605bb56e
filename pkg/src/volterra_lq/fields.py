"""Data model: matrix fields, triangle kernels, Pi-pairs, strategies, problems.

Triangle kernels live on the closed discrete triangle {(i, j): i >= j}.
Family-tagged kernels (constant, fractional) carry their analytic form and
expose exact cell integrals; their nominal "diagonal sample" is the first-cell
average, so that a left-rule sum ``h * value`` reproduces the exact cell
integral there and no singular point value is ever touched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import timegrid as tg
from .errors import ConfigError, InvalidArgumentError
from .timegrid import TimeGrid

ZERO = "zero"
SAMPLED = "sampled"


def _sym(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + np.swapaxes(mat, -1, -2))


def as_matrix(value, rows: int, cols: int, name: str) -> np.ndarray:
    """Coerce scalars / nested lists to an (rows, cols) float matrix.

    A bare scalar becomes ``value * I`` for square shapes and a constant
    column for column shapes.
    """
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        if rows == cols:
            return float(arr) * np.eye(rows)
        if cols == 1:
            return np.full((rows, 1), float(arr))
        raise ConfigError(f"{name}: scalar shorthand needs a square or column shape")
    if arr.ndim == 1 and cols == 1 and arr.shape[0] == rows:
        return arr.reshape(rows, 1)
    if arr.shape != (rows, cols):
        raise ConfigError(f"{name}: expected shape {(rows, cols)}, got {arr.shape}")
    return arr


class MatrixField:
    """Grid-sampled matrix-valued function of time; values[k] is the node value."""

    def __init__(self, grid: TimeGrid, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.ndim != 3 or values.shape[0] != grid.n_nodes:
            raise InvalidArgumentError(
                f"field values must have shape (N+1, rows, cols), got {values.shape}"
            )
        self.grid = grid
        self.values = values

    @property
    def rows(self) -> int:
        return self.values.shape[1]

    @property
    def cols(self) -> int:
        return self.values.shape[2]

    @classmethod
    def zeros(cls, grid: TimeGrid, rows: int, cols: int) -> "MatrixField":
        return cls(grid, np.zeros((grid.n_nodes, rows, cols)))

    @classmethod
    def constant(cls, grid: TimeGrid, mat) -> "MatrixField":
        mat = np.atleast_2d(np.asarray(mat, dtype=float))
        return cls(grid, np.broadcast_to(mat, (grid.n_nodes,) + mat.shape).copy())

    @classmethod
    def from_function(cls, grid: TimeGrid, fn) -> "MatrixField":
        vals = np.stack([np.atleast_2d(np.asarray(fn(t), dtype=float)) for t in grid.nodes])
        return cls(grid, vals)

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        if self.rows != self.cols:
            return False
        scale = max(np.abs(self.values).max(), 1.0)
        return np.abs(self.values - np.swapaxes(self.values, -1, -2)).max() <= tol * scale

    def sup_norm(self) -> float:
        """max over nodes of the spectral norm."""
        return float(max(np.linalg.norm(v, ord=2) for v in self.values))

    def __add__(self, other: "MatrixField") -> "MatrixField":
        return MatrixField(self.grid, self.values + other.values)

    def __sub__(self, other: "MatrixField") -> "MatrixField":
        return MatrixField(self.grid, self.values - other.values)

    def scaled(self, factor: float) -> "MatrixField":
        return MatrixField(self.grid, factor * self.values)


class TriangleKernel:
    """Matrix-valued kernel K(t_i, t_j) on the closed triangle i >= j.

    Representations
    ---------------
    family ``zero``
        identically zero.
    family ``constant`` / ``fractional``
        ``K(t, s) = coef * profile(t - s)`` with profile 1 or ``tau^(alpha-1)``;
        the analytic form is authoritative and all quadrature uses exact cell
        moments.
    family ``sampled``
        a dense table of node samples (entries strictly below the diagonal are
        zeroed); cell integrals fall back to ``h * sample`` at the cell's
        left-in-gap node.
    """

    def __init__(self, grid: TimeGrid, rows: int, cols: int, family: str,
                 coef=None, alpha=None, values=None):
        self.grid = grid
        self.rows = int(rows)
        self.cols = int(cols)
        self.family = family
        self.coef = None
        self.alpha = None
        self.values = None
        if family == ZERO:
            pass
        elif family in (tg.CONSTANT, tg.FRACTIONAL):
            self.alpha = tg.check_family(family, 1.0 if family == tg.CONSTANT else alpha)
            self.coef = as_matrix(coef, rows, cols, "kernel coefficient")
        elif family == SAMPLED:
            values = np.asarray(values, dtype=float)
            shape = (grid.n_nodes, grid.n_nodes, rows, cols)
            if values.shape != shape:
                raise InvalidArgumentError(f"sampled kernel needs shape {shape}, got {values.shape}")
            ii, jj = np.meshgrid(np.arange(grid.n_nodes), np.arange(grid.n_nodes), indexing="ij")
            self.values = np.where((ii >= jj)[:, :, None, None], values, 0.0)
        else:
            raise InvalidArgumentError(f"unknown kernel family {family!r}")
        self._pt = None
        self._wfirst = None
        self._wsec = None

    # -- constructors -----------------------------------------------------

    @classmethod
    def zeros(cls, grid: TimeGrid, rows: int, cols: int) -> "TriangleKernel":
        return cls(grid, rows, cols, ZERO)

    @classmethod
    def constant(cls, grid: TimeGrid, coef, rows=None, cols=None) -> "TriangleKernel":
        coef = np.atleast_2d(np.asarray(coef, dtype=float))
        if rows is None:
            rows, cols = coef.shape
        return cls(grid, rows, cols, tg.CONSTANT, coef=coef)

    @classmethod
    def fractional(cls, grid: TimeGrid, coef, alpha: float, rows=None, cols=None) -> "TriangleKernel":
        coef = np.atleast_2d(np.asarray(coef, dtype=float))
        if rows is None:
            rows, cols = coef.shape
        return cls(grid, rows, cols, tg.FRACTIONAL, coef=coef, alpha=alpha)

    @classmethod
    def from_samples(cls, grid: TimeGrid, values: np.ndarray) -> "TriangleKernel":
        values = np.asarray(values, dtype=float)
        return cls(grid, values.shape[2], values.shape[3], SAMPLED, values=values)

    @classmethod
    def from_function(cls, grid: TimeGrid, fn, rows: int, cols: int) -> "TriangleKernel":
        """Sample fn(t, s) on the closed triangle t >= s."""
        n = grid.n_nodes
        vals = np.zeros((n, n, rows, cols))
        for i in range(n):
            for j in range(i + 1):
                vals[i, j] = np.asarray(fn(grid.nodes[i], grid.nodes[j]), dtype=float).reshape(rows, cols)
        return cls(grid, rows, cols, SAMPLED, values=vals)

    # -- basic properties --------------------------------------------------

    @property
    def is_zero(self) -> bool:
        if self.family == ZERO:
            return True
        if self.family == SAMPLED:
            return not self.values.any()
        return not self.coef.any()

    def transpose(self) -> "TriangleKernel":
        """Pointwise matrix transpose; the (i, j) support is unchanged."""
        if self.family == ZERO:
            return TriangleKernel.zeros(self.grid, self.cols, self.rows)
        if self.family == SAMPLED:
            return TriangleKernel.from_samples(self.grid, np.swapaxes(self.values, -1, -2))
        return TriangleKernel(self.grid, self.cols, self.rows, self.family,
                              coef=self.coef.T, alpha=self.alpha)

    # -- quadrature tables ---------------------------------------------------

    def _profile_points(self) -> np.ndarray:
        """profile(t_i - t_j) on i >= j; diagonal = first-cell average."""
        t = self.grid.nodes
        h = self.grid.step
        gaps = t[:, None] - t[None, :]
        if self.alpha == 1.0:
            prof = np.ones_like(gaps)
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                prof = np.where(gaps > 0.0, gaps, 1.0) ** (self.alpha - 1.0)
            prof[gaps <= 0.0] = h ** (self.alpha - 1.0) / self.alpha
        prof[gaps < 0.0] = 0.0
        return prof

    def point_table(self) -> np.ndarray:
        """Node samples ``pt[i, j]``, i >= j (family diagonal = cell average)."""
        if self._pt is None:
            n = self.grid.n_nodes
            if self.family == ZERO:
                self._pt = np.zeros((n, n, self.rows, self.cols))
            elif self.family == SAMPLED:
                self._pt = self.values
            else:
                self._pt = self._profile_points()[:, :, None, None] * self.coef
        return self._pt

    def weights_first(self) -> np.ndarray:
        """First-argument cell integrals Wf[k, i] = int_{t_i}^{t_{i+1}} K(s, t_k) ds.

        Defined for k <= i <= N-1 (zero elsewhere); used by the tail
        integrals over the kernel's first argument.
        """
        if self._wfirst is None:
            n = self.grid.n_nodes
            if self.family == ZERO:
                self._wfirst = np.zeros((n, n, self.rows, self.cols))
            elif self.family == SAMPLED:
                w = self.grid.step * np.swapaxes(self.values, 0, 1).copy()
                w[:, n - 1] = 0.0  # no cell starts at t_N
                self._wfirst = w
            else:
                t = self.grid.nodes
                gaps = np.maximum(t[None, :] - t[:, None], 0.0)  # [k, i] = t_i - t_k
                mom = tg.gap_moments(self.alpha, gaps[:, : n - 1], gaps[:, 1:n])
                scal = np.zeros((n, n))
                scal[:, : n - 1] = mom
                valid = np.arange(n)[None, :] >= np.arange(n)[:, None]
                scal = np.where(valid, scal, 0.0)
                self._wfirst = scal[:, :, None, None] * self.coef
        return self._wfirst

    def weights_second(self) -> np.ndarray:
        """Second-argument cell integrals Wsec[m, j] = int_{t_j}^{t_{j+1}} K(t_m, s) ds.

        Defined for j < m (zero elsewhere); this is the classic
        product-integration table for Volterra sums over the past.
        """
        if self._wsec is None:
            n = self.grid.n_nodes
            if self.family == ZERO:
                self._wsec = np.zeros((n, n, self.rows, self.cols))
            elif self.family == SAMPLED:
                w = self.grid.step * self.values.copy()
                strict = np.arange(n)[None, :] < np.arange(n)[:, None]
                self._wsec = np.where(strict[:, :, None, None], w, 0.0)
            else:
                t = self.grid.nodes
                gaps = np.maximum(t[:, None] - t[None, :], 0.0)  # [m, j] = t_m - t_j
                mom = tg.gap_moments(self.alpha, gaps[:, 1:n], gaps[:, : n - 1])
                scal = np.zeros((n, n))
                scal[:, : n - 1] = mom
                strict = np.arange(n)[None, :] < np.arange(n)[:, None]
                scal = np.where(strict, scal, 0.0)
                self._wsec = scal[:, :, None, None] * self.coef
        return self._wsec

    def squared_tail_profile(self) -> np.ndarray:
        """For each node k: sum_i int_cell |K(s, t_k)|_F^2 ds (exact for families)."""
        n = self.grid.n_nodes
        if self.family == ZERO:
            return np.zeros(n)
        if self.family == SAMPLED:
            sq = np.sum(self.point_table() ** 2, axis=(-2, -1))  # [i, j]
            sq = sq.T.copy()  # [k, i]
            sq[:, n - 1] = 0.0
            return self.grid.step * sq.sum(axis=1)
        beta = 2.0 * self.alpha - 1.0
        t = self.grid.nodes
        tails = tg.gap_moments(beta, np.zeros(n), t[-1] - t)
        return float(np.sum(self.coef**2)) * tails


def pair_profile_table(m1: TriangleKernel, m2: TriangleKernel):
    """Exact cell moments of the product of two family profiles.

    Returns ``scal[k, i] = int_{t_i}^{t_{i+1}} prof1(s - t_k) prof2(s - t_k) ds``
    for k <= i <= N-1, or None when either kernel is sampled.
    """
    if m1.family not in (tg.CONSTANT, tg.FRACTIONAL) or m2.family not in (tg.CONSTANT, tg.FRACTIONAL):
        return None
    grid = m1.grid
    beta = m1.alpha + m2.alpha - 1.0
    n = grid.n_nodes
    t = grid.nodes
    gaps = np.maximum(t[None, :] - t[:, None], 0.0)
    mom = tg.gap_moments(beta, gaps[:, : n - 1], gaps[:, 1:n])
    scal = np.zeros((n, n))
    scal[:, : n - 1] = mom
    valid = np.arange(n)[None, :] >= np.arange(n)[:, None]
    return np.where(valid, scal, 0.0)


class PiPair:
    """The pair P = (P1, P2): symmetric field plus pyramid kernel.

    ``p1[k]`` is d x d symmetric; ``p2[i, j, k]`` is stored densely and is
    meaningful for k <= min(i, j), with the transpose symmetry
    ``p2[i, j, k] == p2[j, i, k].T``.
    """

    def __init__(self, grid: TimeGrid, p1: np.ndarray, p2: np.ndarray):
        n = grid.n_nodes
        p1 = np.asarray(p1, dtype=float)
        p2 = np.asarray(p2, dtype=float)
        d = p1.shape[1]
        if p1.shape != (n, d, d):
            raise InvalidArgumentError(f"p1 must have shape (N+1, d, d), got {p1.shape}")
        if p2.shape != (n, n, n, d, d):
            raise InvalidArgumentError(f"p2 must have shape (N+1, N+1, N+1, d, d), got {p2.shape}")
        self.grid = grid
        self.p1 = p1
        self.p2 = p2

    @property
    def dim(self) -> int:
        return self.p1.shape[1]

    @classmethod
    def zeros(cls, grid: TimeGrid, d: int) -> "PiPair":
        n = grid.n_nodes
        return cls(grid, np.zeros((n, d, d)), np.zeros((n, n, n, d, d)))

    @classmethod
    def constants(cls, grid: TimeGrid, p1_value, p2_value) -> "PiPair":
        """Constant P1 and constant P2 on the valid pyramid (zero outside)."""
        p1_value = np.atleast_2d(np.asarray(p1_value, dtype=float))
        p2_value = np.atleast_2d(np.asarray(p2_value, dtype=float))
        d = p1_value.shape[0]
        n = grid.n_nodes
        p1 = np.broadcast_to(p1_value, (n, d, d)).copy()
        p2 = np.zeros((n, n, n, d, d))
        for k in range(n):
            p2[k:, k:, k] = p2_value
        return cls(grid, p1, p2)

    def symmetry_violation(self) -> float:
        v1 = np.abs(self.p1 - np.swapaxes(self.p1, -1, -2)).max()
        swapped = np.swapaxes(np.swapaxes(self.p2, 0, 1), -1, -2)
        v2 = np.abs(self.p2 - swapped).max()
        return float(v1 + v2)

    def symmetrized(self) -> "PiPair":
        p1 = _sym(self.p1)
        swapped = np.swapaxes(np.swapaxes(self.p2, 0, 1), -1, -2)
        return PiPair(self.grid, p1, 0.5 * (self.p2 + swapped))

    def symmetrize_inplace(self) -> "PiPair":
        """Enforce both symmetries level by level (bounded scratch memory)."""
        self.p1[:] = _sym(self.p1)
        n = self.grid.n_nodes
        for k in range(n):
            slab = self.p2[k:, k:, k]
            self.p2[k:, k:, k] = 0.5 * (slab + np.swapaxes(np.swapaxes(slab, 0, 1), -1, -2))
        return self

    def level(self, k: int) -> np.ndarray:
        """View of the level-k slab p2[k:, k:, k]."""
        return self.p2[k:, k:, k]


@dataclass
class Strategy:
    """Causal feedback triple: gain field, forward-state gain kernel, feedforward."""

    xi: MatrixField
    gamma: TriangleKernel
    v: MatrixField

    def shifted(self, dv: MatrixField) -> "Strategy":
        return Strategy(self.xi, self.gamma, self.v + dv)


def zero_strategy(grid: TimeGrid, d: int, ell: int) -> Strategy:
    return Strategy(MatrixField.zeros(grid, ell, d),
                    TriangleKernel.zeros(grid, ell, d),
                    MatrixField.zeros(grid, ell, 1))


@dataclass
class Problem:
    """Full coefficient bundle for one control problem on one grid."""

    d: int
    ell: int
    grid: TimeGrid
    A: TriangleKernel
    B: TriangleKernel
    C: TriangleKernel
    D: TriangleKernel
    Q: MatrixField
    S: MatrixField
    R: MatrixField
    b: TriangleKernel
    sigma: TriangleKernel
    q: MatrixField
    rho: MatrixField
    t0_index: int
    x: MatrixField
    config: dict | None = field(default=None, repr=False)

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps


@dataclass
class ProblemDiagnostics:
    """Discrete surrogates of the coefficient-space memberships."""

    triangle_l2: dict
    tail_sup: dict
    sup: dict

    def as_dict(self) -> dict:
        return {"triangle_l2": self.triangle_l2, "tail_sup": self.tail_sup, "sup": self.sup}


def validate_problem(p: Problem) -> ProblemDiagnostics:
    """Report discrete norms of the coefficients; raise on non-finite values.

    A, B get triangle L2 norms; C, D get the sup-over-nodes tail norm
    sup_k int_{t_k}^T |K(s, t_k)|^2 ds (exact cell moments for families);
    Q, R, S get sup-over-nodes spectral norms.
    """
    h = p.grid.step
    tri = {}
    for name, ker in (("A", p.A), ("B", p.B)):
        tri[name] = float(np.sqrt(h * ker.squared_tail_profile()[:-1].sum()))
    tail = {}
    for name, ker in (("C", p.C), ("D", p.D)):
        tail[name] = float(ker.squared_tail_profile().max())
    sup = {name: fld.sup_norm() for name, fld in (("Q", p.Q), ("R", p.R), ("S", p.S))}
    diags = ProblemDiagnostics(tri, tail, sup)
    for group in (tri, tail, sup):
        for name, val in group.items():
            if not np.isfinite(val):
                raise ConfigError(f"validation failed: non-finite norm for {name}")
    return diags


# -- declarative configuration ----------------------------------------------

_TOP_KEYS = {"dimensions", "horizon", "steps", "kernels", "weights", "inhomogeneous", "input"}
_DIM_KEYS = {"d", "l"}
_KERNEL_NAMES = {"A", "B", "C", "D"}
_WEIGHT_NAMES = {"Q", "R", "S"}
_INHOM_NAMES = {"b", "sigma", "q", "rho"}
_INPUT_KEYS = {"t0_index", "x"}
_KERNEL_SPEC_KEYS = {"family", "params"}
_FIELD_SPEC_KEYS = {"type", "value", "values", "coeffs"}


def _reject_unknown(d: dict, allowed: set, where: str):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def _parse_kernel(grid: TimeGrid, spec, rows: int, cols: int, name: str) -> TriangleKernel:
    if spec is None:
        return TriangleKernel.zeros(grid, rows, cols)
    if not isinstance(spec, dict):
        raise ConfigError(f"kernel {name}: spec must be an object")
    _reject_unknown(spec, _KERNEL_SPEC_KEYS, f"kernel {name}")
    family = spec.get("family")
    params = spec.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError(f"kernel {name}: params must be an object")
    try:
        if family == "zero":
            _reject_unknown(params, set(), f"kernel {name} params")
            return TriangleKernel.zeros(grid, rows, cols)
        if family == "constant":
            _reject_unknown(params, {"value"}, f"kernel {name} params")
            coef = as_matrix(params.get("value", 0.0), rows, cols, f"kernel {name}")
            return TriangleKernel(grid, rows, cols, tg.CONSTANT, coef=coef)
        if family == "fractional":
            _reject_unknown(params, {"coef", "alpha"}, f"kernel {name} params")
            coef = as_matrix(params.get("coef", 1.0), rows, cols, f"kernel {name}")
            return TriangleKernel(grid, rows, cols, tg.FRACTIONAL,
                                  coef=coef, alpha=params.get("alpha"))
        if family == "table":
            _reject_unknown(params, {"values"}, f"kernel {name} params")
            vals = np.asarray(params["values"], dtype=float)
            n = grid.n_nodes
            vals = vals.reshape(n, n, rows, cols)
            return TriangleKernel.from_samples(grid, vals)
    except ConfigError:
        raise
    except (InvalidArgumentError, KeyError, ValueError) as exc:
        raise ConfigError(f"kernel {name}: {exc}") from exc
    raise ConfigError(f"kernel {name}: unknown family {family!r}")


def _parse_field(grid: TimeGrid, spec, rows: int, cols: int, name: str) -> MatrixField:
    if spec is None:
        return MatrixField.zeros(grid, rows, cols)
    if not isinstance(spec, dict):
        # bare scalar / matrix shorthand means a constant field
        return MatrixField.constant(grid, as_matrix(spec, rows, cols, name))
    _reject_unknown(spec, _FIELD_SPEC_KEYS, f"field {name}")
    kind = spec.get("type", "constant")
    if kind == "constant":
        return MatrixField.constant(grid, as_matrix(spec.get("value", 0.0), rows, cols, name))
    if kind == "polynomial":
        coeffs = [as_matrix(c, rows, cols, name) for c in spec.get("coeffs", [])]
        if not coeffs:
            return MatrixField.zeros(grid, rows, cols)
        vals = np.zeros((grid.n_nodes, rows, cols))
        for m, c in enumerate(coeffs):
            vals += (grid.nodes**m)[:, None, None] * c
        return MatrixField(grid, vals)
    if kind == "table":
        vals = np.asarray(spec.get("values"), dtype=float).reshape(grid.n_nodes, rows, cols)
        return MatrixField(grid, vals)
    raise ConfigError(f"field {name}: unknown type {kind!r}")


def build_problem(config: dict) -> Problem:
    """Assemble and validate a Problem from a declarative configuration.

    The configuration layout (unknown keys rejected at every level):

        {"dimensions": {"d": 1, "l": 1},
         "horizon": 1.0, "steps": 64,
         "kernels": {"A": ..., "B": ..., "C": ..., "D": ...},
         "weights": {"Q": ..., "R": ..., "S": ...},
         "inhomogeneous": {"b": ..., "sigma": ..., "q": ..., "rho": ...},
         "input": {"t0_index": 0, "x": ...}}
    """
    if not isinstance(config, dict):
        raise ConfigError("configuration must be an object")
    _reject_unknown(config, _TOP_KEYS, "config")
    dims = config.get("dimensions")
    if not isinstance(dims, dict):
        raise ConfigError("config: dimensions section is required")
    _reject_unknown(dims, _DIM_KEYS, "dimensions")
    d = int(dims.get("d", 0))
    ell = int(dims.get("l", 0))
    if d < 1 or ell < 1:
        raise ConfigError(f"dimensions must be positive, got d={d}, l={ell}")
    if "horizon" not in config or "steps" not in config:
        raise ConfigError("config: horizon and steps are required")
    try:
        grid = tg.make_grid(config["horizon"], config["steps"])
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from exc

    kernels = config.get("kernels", {}) or {}
    _reject_unknown(kernels, _KERNEL_NAMES, "kernels")
    shapes = {"A": (d, d), "B": (d, ell), "C": (d, d), "D": (d, ell)}
    K = {name: _parse_kernel(grid, kernels.get(name), *shapes[name], name) for name in shapes}

    weights = config.get("weights", {}) or {}
    _reject_unknown(weights, _WEIGHT_NAMES, "weights")
    Q = _parse_field(grid, weights.get("Q"), d, d, "Q")
    R = _parse_field(grid, weights.get("R"), ell, ell, "R")
    S = _parse_field(grid, weights.get("S"), ell, d, "S")
    for name, fld in (("Q", Q), ("R", R)):
        if not fld.is_symmetric():
            raise ConfigError(f"validation failed: {name} is not symmetric at every node")

    inhom = config.get("inhomogeneous", {}) or {}
    _reject_unknown(inhom, _INHOM_NAMES, "inhomogeneous")
    b = _parse_kernel(grid, inhom.get("b"), d, 1, "b")
    sigma = _parse_kernel(grid, inhom.get("sigma"), d, 1, "sigma")
    q = _parse_field(grid, inhom.get("q"), d, 1, "q")
    rho = _parse_field(grid, inhom.get("rho"), ell, 1, "rho")

    inp = config.get("input", {}) or {}
    _reject_unknown(inp, _INPUT_KEYS, "input")
    t0_index = int(inp.get("t0_index", 0))
    if not 0 <= t0_index < grid.n_steps:
        raise ConfigError(f"input.t0_index {t0_index} out of range [0, {grid.n_steps - 1}]")
    x = _parse_field(grid, inp.get("x"), d, 1, "input.x")

    for name, fld in (("Q", Q), ("R", R), ("S", S), ("q", q), ("rho", rho), ("x", x)):
        if not np.all(np.isfinite(fld.values)):
            raise ConfigError(f"validation failed: non-finite entries in {name}")

    p = Problem(d=d, ell=ell, grid=grid, A=K["A"], B=K["B"], C=K["C"], D=K["D"],
                Q=Q, S=S, R=R, b=b, sigma=sigma, q=q, rho=rho,
                t0_index=t0_index, x=x, config=config)
    validate_problem(p)
    return p


def _kernel_to_spec(k: TriangleKernel) -> dict:
    if k.family == ZERO:
        return {"family": "zero"}
    if k.family == tg.CONSTANT:
        return {"family": "constant", "params": {"value": k.coef.tolist()}}
    if k.family == tg.FRACTIONAL:
        return {"family": "fractional", "params": {"coef": k.coef.tolist(), "alpha": k.alpha}}
    return {"family": "table", "params": {"values": k.values.tolist()}}


def _field_to_spec(f: MatrixField) -> dict:
    return {"type": "table", "values": f.values.tolist()}


def problem_to_config(p: Problem) -> dict:
    """Serialize a Problem back to a configuration; round trips bit-for-bit."""
    return {
        "dimensions": {"d": p.d, "l": p.ell},
        "horizon": p.grid.horizon,
        "steps": p.grid.n_steps,
        "kernels": {n: _kernel_to_spec(k) for n, k in
                    (("A", p.A), ("B", p.B), ("C", p.C), ("D", p.D))},
        "weights": {"Q": _field_to_spec(p.Q), "R": _field_to_spec(p.R), "S": _field_to_spec(p.S)},
        "inhomogeneous": {"b": _kernel_to_spec(p.b), "sigma": _kernel_to_spec(p.sigma),
                          "q": _field_to_spec(p.q), "rho": _field_to_spec(p.rho)},
        "input": {"t0_index": p.t0_index, "x": _field_to_spec(p.x)},
    }
