"""CSV, JSON and plain-text writers for computed artifacts.

Floats are written with ``repr`` so files are reproducible bit for bit.
"""

import csv
import json
from pathlib import Path

import numpy as np

__all__ = [
    "to_jsonable",
    "write_json",
    "write_csv",
    "write_eigenpairs",
    "write_labels",
    "write_sweep",
    "write_polylines",
    "write_vertex_functions",
    "write_census",
    "write_advected_polylines",
]


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays and tuples to JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    return obj


def write_json(path, obj):
    path = Path(path)
    with path.open("w") as fh:
        json.dump(to_jsonable(obj), fh, indent=2)
        fh.write("\n")
    return path


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _coord_header(grid):
    return ["x"] if grid.dim == 1 else ["x", "y"]


def write_eigenpairs(path, grid, basis):
    """Per-vertex values: ``vertex, x[, y], u1, ..., uk``."""
    k = len(basis)
    header = ["vertex"] + _coord_header(grid) + [f"u{i + 1}" for i in range(k)]
    X = grid.vertex_coords
    rows = (
        [v] + list(X[v]) + list(basis.eigenvectors[v])
        for v in range(grid.n_vertices)
    )
    return write_csv(path, header, rows)


def write_vertex_functions(path, grid, columns):
    """Per-vertex columns given as ``{name: array}``."""
    names = list(columns)
    X = grid.vertex_coords
    rows = ([v] + list(X[v]) + [columns[n][v] for n in names] for v in range(grid.n_vertices))
    return write_csv(path, ["vertex"] + _coord_header(grid) + names, rows)


def write_labels(path, decomposition):
    labels = decomposition.labels()
    return write_csv(path, ["vertex", "label"], enumerate(labels))


def write_sweep(path, sweep):
    """Columns ``s, volume, perimeter, ratio, admissible``."""
    rows = ((r.s, r.volume, r.perimeter, r.ratio, r.admissible) for r in sweep.records)
    return write_csv(path, ["s", "volume", "perimeter", "ratio", "admissible"], rows)


def write_polylines(path, polylines):
    """One ``x y`` (or ``x``) point per line; polylines separated by blank lines."""
    path = Path(path)
    with path.open("w") as fh:
        for i, line in enumerate(polylines):
            if i:
                fh.write("\n")
            for p in np.atleast_2d(line):
                fh.write(" ".join(repr(float(c)) for c in np.atleast_1d(p)) + "\n")
    return path


def write_census(path, rows):
    header = ["k", "lambda_k", "enumerated_r_k", "formula_r_k", "cheeger_bound"]
    return write_csv(path, header, rows)


def write_advected_polylines(path, flowmap, polylines):
    """Advected polyline points per time: ``t, line, index, x, y``."""
    rows = []
    for t in flowmap.times:
        for li, line in enumerate(polylines):
            img = flowmap.map(t, np.atleast_2d(line), wrap=False)
            rows.extend((t, li, j, p[0], p[1]) for j, p in enumerate(img))
    return write_csv(path, ["t", "line", "index", "x", "y"], rows)
