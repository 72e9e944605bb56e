"""File formats for solver outputs: delimited tables, packed pyramid, JSON.

Layouts
-------
P1            CSV, one row per node: node, t, then the matrix row-major.
P2            flat float64 binary of the symmetry-halved pyramid plus a JSON
              sidecar recording dimensions, ordering (i >= j >= k, row-major
              d x d blocks) and endianness.
gains         node CSV for Xi, triangle CSV for Gamma (rows i >= j).
eta           triangle CSV with an explicit on-diagonal marker column.
fields        node CSV (feedforward, kappa, value tables).
JSON reports  written atomically (temp file + rename).
"""

from __future__ import annotations

import json
import os
import sys
import tempfile

import numpy as np

from .errors import InvalidArgumentError
from .fields import MatrixField, PiPair, Strategy, TriangleKernel
from .timegrid import TimeGrid


def write_json_atomic(path: str, payload: dict):
    """Serialize JSON to a sibling temp file, then rename into place."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _matrix_header(prefix: str, rows: int, cols: int) -> list:
    return [f"{prefix}_{a}_{b}" for a in range(rows) for b in range(cols)]


def save_field_csv(path: str, field: MatrixField, prefix: str = "v"):
    grid = field.grid
    header = ["node", "t"] + _matrix_header(prefix, field.rows, field.cols)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(grid.n_nodes):
            cells = [str(k), repr(float(grid.nodes[k]))]
            cells += [repr(float(v)) for v in field.values[k].ravel()]
            fh.write(",".join(cells) + "\n")


def load_field_csv(path: str, grid: TimeGrid, rows: int, cols: int) -> MatrixField:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] != grid.n_nodes or data.shape[1] != 2 + rows * cols:
        raise InvalidArgumentError(
            f"{path}: expected {grid.n_nodes} rows x {2 + rows * cols} columns, "
            f"got {data.shape}")
    vals = data[:, 2:].reshape(grid.n_nodes, rows, cols)
    return MatrixField(grid, vals)


def save_triangle_csv(path: str, kernel: TriangleKernel, prefix: str = "g",
                      diagonal_marker: bool = False):
    grid = kernel.grid
    pt = kernel.point_table()
    header = ["first_node", "second_node", "t_first", "t_second"]
    if diagonal_marker:
        header.append("on_diagonal")
    header += _matrix_header(prefix, kernel.rows, kernel.cols)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(grid.n_nodes):
            for j in range(i + 1):
                cells = [str(i), str(j), repr(float(grid.nodes[i])), repr(float(grid.nodes[j]))]
                if diagonal_marker:
                    cells.append("1" if i == j else "0")
                cells += [repr(float(v)) for v in pt[i, j].ravel()]
                fh.write(",".join(cells) + "\n")


def load_triangle_csv(path: str, grid: TimeGrid, rows: int, cols: int,
                      diagonal_marker: bool = False) -> TriangleKernel:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    extra = 5 if diagonal_marker else 4
    if data.shape[1] != extra + rows * cols:
        raise InvalidArgumentError(f"{path}: unexpected column count {data.shape[1]}")
    n = grid.n_nodes
    vals = np.zeros((n, n, rows, cols))
    for row in data:
        i, j = int(row[0]), int(row[1])
        vals[i, j] = row[extra:].reshape(rows, cols)
    return TriangleKernel.from_samples(grid, vals)


def save_pi_pair(out_dir: str, P: PiPair):
    """p1.csv plus the packed pyramid p2.bin with its JSON sidecar."""
    os.makedirs(out_dir, exist_ok=True)
    grid = P.grid
    d = P.dim
    save_field_csv(os.path.join(out_dir, "p1.csv"), MatrixField(grid, P.p1), prefix="p")
    n = grid.n_nodes
    blocks = []
    for i in range(n):
        for j in range(i + 1):
            for k in range(j + 1):
                blocks.append(P.p2[i, j, k])
    flat = np.ascontiguousarray(np.stack(blocks), dtype="<f8") if blocks else np.zeros(0)
    flat.tofile(os.path.join(out_dir, "p2.bin"))
    write_json_atomic(os.path.join(out_dir, "p2_meta.json"), {
        "dtype": "float64",
        "byteorder": "little",
        "native_byteorder": sys.byteorder,
        "d": d,
        "n_nodes": n,
        "ordering": "i>=j>=k",
        "index_loop": "for i in 0..N: for j in 0..i: for k in 0..j",
        "block_layout": "row-major d x d",
        "block_count": len(blocks),
        "symmetry": "P2[j,i,k] = P2[i,j,k]^T reconstructs the other half",
    })


def load_pi_pair(out_dir: str, grid: TimeGrid) -> PiPair:
    with open(os.path.join(out_dir, "p2_meta.json")) as fh:
        meta = json.load(fh)
    d = int(meta["d"])
    n = int(meta["n_nodes"])
    if n != grid.n_nodes:
        raise InvalidArgumentError(f"pyramid was stored on {n} nodes, grid has {grid.n_nodes}")
    p1 = load_field_csv(os.path.join(out_dir, "p1.csv"), grid, d, d).values
    raw = np.fromfile(os.path.join(out_dir, "p2.bin"), dtype="<f8")
    expect = meta["block_count"] * d * d
    if raw.size != expect:
        raise InvalidArgumentError(f"p2.bin holds {raw.size} floats, expected {expect}")
    blocks = raw.reshape(-1, d, d)
    p2 = np.zeros((n, n, n, d, d))
    idx = 0
    for i in range(n):
        for j in range(i + 1):
            for k in range(j + 1):
                p2[i, j, k] = blocks[idx]
                p2[j, i, k] = blocks[idx].T
                idx += 1
    return PiPair(grid, p1, p2)


def save_strategy(out_dir: str, strategy: Strategy):
    os.makedirs(out_dir, exist_ok=True)
    save_field_csv(os.path.join(out_dir, "gains_xi.csv"), strategy.xi, prefix="xi")
    save_triangle_csv(os.path.join(out_dir, "gains_gamma.csv"), strategy.gamma, prefix="gamma")
    save_field_csv(os.path.join(out_dir, "feedforward_v.csv"), strategy.v, prefix="v")


def load_strategy(out_dir: str, grid: TimeGrid, d: int, ell: int) -> Strategy:
    xi = load_field_csv(os.path.join(out_dir, "gains_xi.csv"), grid, ell, d)
    gamma = load_triangle_csv(os.path.join(out_dir, "gains_gamma.csv"), grid, ell, d)
    v = load_field_csv(os.path.join(out_dir, "feedforward_v.csv"), grid, ell, 1)
    return Strategy(xi, gamma, v)


def save_batch_summary(path: str, batch, mean: float, stderr: float):
    write_json_atomic(path, {
        "n_paths": batch.n_paths,
        "seed": batch.seed,
        "mean": mean,
        "stderr": stderr,
        "flagged_paths": batch.n_flagged,
    })


def save_per_path_costs(path: str, batch):
    with open(path, "w") as fh:
        fh.write("path,cost,flagged\n")
        for i in range(batch.n_paths):
            fh.write(f"{i},{batch.costs[i]!r},{int(batch.flagged[i])}\n")
