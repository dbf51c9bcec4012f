"""Discretised weighted Riemannian domains on structured grids.

A domain is a tensor-product grid of vertices (dim 1 or 2) with optional
periodic wrap per axis, a piecewise-constant metric tensor per cell and a
log-density ``phi`` per vertex.  The weighted measure of a cell is
``mean(exp(phi) at corners) * sqrt(det g) * cell area``.

Vertex ``(i, j)`` has flat index ``i * ny + j``.  On a periodic axis with
``n`` vertices the spacing is ``L / n`` and the last cell wraps around; on a
non-periodic axis the spacing is ``L / (n - 1)`` and both extremes are
boundary vertices.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError
from .expr import compile_expression

__all__ = [
    "KINDS",
    "WeightedGrid",
    "MetricField",
    "WeightField",
    "build_grid",
    "cell_measures",
    "vertex_masses",
    "measure_of_vertex_region",
]

#: kind -> (dimension, periodic flag per axis)
KINDS = {
    "interval": (1, (False,)),
    "rectangle": (2, (False, False)),
    "torus": (2, (True, True)),
    "cylinder": (2, (True, False)),
}

# Corner offsets of a quad cell, counter-clockwise from the origin corner.
_QUAD = np.array([[0, 0], [1, 0], [1, 1], [0, 1]])
# The two triangles of a quad, as indices into _QUAD (split along 0-2).
_TRI_SPLIT = np.array([[0, 1, 2], [0, 2, 3]])


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class WeightedGrid:
    """Structured vertex grid with per-axis periodicity.

    Parameters
    ----------
    kind : str
        One of :data:`KINDS`.
    resolution : tuple of int
        Vertex count per axis.
    extent : tuple of float
        Physical length per axis.
    periodic : tuple of bool
        Periodic flag per axis.
    """

    kind: str
    resolution: tuple
    extent: tuple
    periodic: tuple
    vertex_coords: np.ndarray = field(init=False, repr=False)
    boundary_vertices: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.resolution) != len(self.extent) or len(self.resolution) != len(self.periodic):
            raise ConfigError("resolution, extent and periodic must have one entry per axis")
        if len(self.resolution) not in (1, 2):
            raise ConfigError("only 1-D and 2-D grids are supported")
        if any(int(n) != n or n < 2 for n in self.resolution):
            raise ConfigError(f"resolution must be integers >= 2, got {self.resolution}")
        if any(not np.isfinite(L) or L <= 0 for L in self.extent):
            raise ConfigError(f"extent must be positive, got {self.extent}")
        axes = [np.arange(n) * h for n, h in zip(self.resolution, self.spacing)]
        mesh = np.meshgrid(*axes, indexing="ij")
        coords = np.stack([m.ravel() for m in mesh], axis=1)
        on_bnd = np.zeros(len(coords), dtype=bool)
        idx = np.indices(self.resolution).reshape(self.dim, -1)
        for a in range(self.dim):
            if not self.periodic[a]:
                on_bnd |= (idx[a] == 0) | (idx[a] == self.resolution[a] - 1)
        object.__setattr__(self, "vertex_coords", _readonly(coords))
        object.__setattr__(self, "boundary_vertices", _readonly(np.flatnonzero(on_bnd)))

    # -- basic geometry -------------------------------------------------
    @property
    def dim(self):
        return len(self.resolution)

    @property
    def n_vertices(self):
        return int(np.prod(self.resolution))

    @property
    def spacing(self):
        return tuple(
            L / n if p else L / (n - 1)
            for n, L, p in zip(self.resolution, self.extent, self.periodic)
        )

    @property
    def cell_shape(self):
        """Number of cells per axis."""
        return tuple(n if p else n - 1 for n, p in zip(self.resolution, self.periodic))

    @property
    def n_cells(self):
        return int(np.prod(self.cell_shape))

    @property
    def cell_area(self):
        """Coordinate volume of one cell (length in dim 1)."""
        return float(np.prod(self.spacing))

    def vertex_index(self, *ij):
        """Flat index of vertex ``(i[, j])``; periodic axes wrap."""
        ij = [np.asarray(i) for i in ij]
        ij = [i % n if p else i for i, n, p in zip(ij, self.resolution, self.periodic)]
        return np.ravel_multi_index(tuple(ij), self.resolution)

    @cached_property
    def cell_index_origin(self):
        """Integer index of each cell's origin corner, shape ``(n_cells, dim)``."""
        idx = np.indices(self.cell_shape).reshape(self.dim, -1).T
        return _readonly(idx)

    @cached_property
    def cells(self):
        """Corner vertex indices per cell: ``(n_cells, 2)`` or ``(n_cells, 4)``.

        In dim 2 corners are ordered counter-clockwise starting at the origin.
        """
        o = self.cell_index_origin
        if self.dim == 1:
            return _readonly(np.stack([o[:, 0], self.vertex_index(o[:, 0] + 1)], axis=1))
        cols = [self.vertex_index(o[:, 0] + dx, o[:, 1] + dy) for dx, dy in _QUAD]
        return _readonly(np.stack(cols, axis=1))

    @cached_property
    def cell_origins(self):
        """Coordinates of each cell's origin corner (never wrapped)."""
        return _readonly(self.cell_index_origin * np.asarray(self.spacing))

    @cached_property
    def cell_centers(self):
        return _readonly(self.cell_origins + 0.5 * np.asarray(self.spacing))

    @cached_property
    def triangles(self):
        """Triangulation of the cells (dim 2 only).

        Returns
        -------
        tri : ndarray, shape (2 * n_cells, 3)
            Vertex indices, counter-clockwise.
        tri_cell : ndarray, shape (2 * n_cells,)
            Owning cell of each triangle.
        tri_xy : ndarray, shape (2 * n_cells, 3, 2)
            Unwrapped coordinates of the triangle corners.
        """
        if self.dim != 2:
            raise ValueError("triangles are only defined for 2-D grids")
        c = self.n_cells
        tri = self.cells[:, _TRI_SPLIT].reshape(2 * c, 3)
        tri_cell = np.repeat(np.arange(c), 2)
        offs = _QUAD[_TRI_SPLIT] * np.asarray(self.spacing)  # (2, 3, 2)
        tri_xy = (self.cell_origins[:, None, None, :] + offs[None]).reshape(2 * c, 3, 2)
        return _readonly(tri), _readonly(tri_cell), _readonly(tri_xy)

    @cached_property
    def edges(self):
        """Unique undirected grid edges (axis neighbours, periodic wrap), ``(E, 2)``."""
        idx = np.indices(self.resolution).reshape(self.dim, -1)
        pairs = []
        for a in range(self.dim):
            n = self.resolution[a]
            if self.periodic[a]:
                mask = np.ones(idx.shape[1], dtype=bool)
            else:
                mask = idx[a] < n - 1
            nb = idx[:, mask].copy()
            nb[a] = (nb[a] + 1) % n
            src = np.ravel_multi_index(tuple(idx[:, mask]), self.resolution)
            dst = np.ravel_multi_index(tuple(nb), self.resolution)
            pairs.append(np.stack([src, dst], axis=1))
        e = np.concatenate(pairs)
        e = e[e[:, 0] != e[:, 1]]
        e = np.unique(np.sort(e, axis=1), axis=0)
        return _readonly(e)

    @cached_property
    def boundary_mask(self):
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.boundary_vertices] = True
        return _readonly(mask)

    def points_on_boundary(self, points, atol=1e-12):
        """Side flags of points lying on a non-periodic axis extreme.

        Returns an ``(N, dim)`` array: entry ``[p, a]`` is ``+1``/``-1`` when
        point ``p`` is on the upper/lower extreme of axis ``a`` and ``0``
        otherwise.
        """
        points = np.atleast_2d(points)
        side = np.zeros(points.shape, dtype=int)
        for a in range(self.dim):
            if self.periodic[a]:
                continue
            tol = atol * max(1.0, self.extent[a])
            side[np.abs(points[:, a]) <= tol, a] = -1
            side[np.abs(points[:, a] - self.extent[a]) <= tol, a] = 1
        return side

    def wrap(self, points):
        """Reduce coordinates modulo the extent on periodic axes."""
        points = np.array(points, dtype=float, copy=True)
        for a in range(self.dim):
            if self.periodic[a]:
                points[..., a] = np.mod(points[..., a], self.extent[a])
        return points


@dataclass(frozen=True, eq=False)
class MetricField:
    """Piecewise-constant symmetric positive-definite metric, one tensor per cell.

    In dim 1 only ``g11`` is used and ``g12``/``g22`` are ``None``.
    """

    g11: np.ndarray = field(repr=False)
    g12: np.ndarray = field(default=None, repr=False)
    g22: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        g11 = _readonly(np.asarray(self.g11, dtype=float))
        object.__setattr__(self, "g11", g11)
        if (self.g12 is None) != (self.g22 is None):
            raise ConfigError("g12 and g22 must both be given for a 2-D metric")
        if self.g12 is not None:
            g12 = _readonly(np.broadcast_to(np.asarray(self.g12, dtype=float), g11.shape))
            g22 = _readonly(np.broadcast_to(np.asarray(self.g22, dtype=float), g11.shape))
            object.__setattr__(self, "g12", g12)
            object.__setattr__(self, "g22", g22)
        if not np.all(np.isfinite(self.det())) or np.any(g11 <= 0) or np.any(self.det() <= 0):
            raise ConfigError("metric is not positive definite in every cell")

    @property
    def dim(self):
        return 1 if self.g12 is None else 2

    @property
    def n_cells(self):
        return self.g11.shape[0]

    def det(self):
        if self.dim == 1:
            return self.g11
        return self.g11 * self.g22 - self.g12 * self.g12

    def sqrt_det(self):
        return np.sqrt(self.det())

    def inverse_components(self):
        """Entries of ``g^{-1}`` as a tuple ``(i11,)`` or ``(i11, i12, i22)``."""
        if self.dim == 1:
            return (1.0 / self.g11,)
        d = self.det()
        return (self.g22 / d, -self.g12 / d, self.g11 / d)

    def tensors(self):
        """Full tensors, shape ``(n_cells, dim, dim)``."""
        if self.dim == 1:
            return self.g11[:, None, None].copy()
        return np.stack(
            [np.stack([self.g11, self.g12], -1), np.stack([self.g12, self.g22], -1)], -2
        )

    @classmethod
    def euclidean(cls, grid):
        one = np.ones(grid.n_cells)
        if grid.dim == 1:
            return cls(one)
        return cls(one, np.zeros(grid.n_cells), one)

    @classmethod
    def from_tensors(cls, tensors):
        t = np.asarray(tensors, dtype=float)
        if t.ndim != 3 or t.shape[1] != t.shape[2] or t.shape[1] not in (1, 2):
            raise ConfigError("tensors must have shape (n_cells, d, d) with d in (1, 2)")
        if t.shape[1] == 1:
            return cls(t[:, 0, 0])
        if not np.allclose(t[:, 0, 1], t[:, 1, 0], rtol=1e-12, atol=1e-14):
            raise ConfigError("metric tensors must be symmetric")
        return cls(t[:, 0, 0], 0.5 * (t[:, 0, 1] + t[:, 1, 0]), t[:, 1, 1])


@dataclass(frozen=True, eq=False)
class WeightField:
    """Per-vertex log-density ``phi``; the measure is ``exp(phi) dV``."""

    phi: np.ndarray = field(repr=False)

    def __post_init__(self):
        phi = _readonly(np.asarray(self.phi, dtype=float))
        if phi.ndim != 1 or not np.all(np.isfinite(phi)):
            raise ConfigError("phi must be a finite 1-D array")
        object.__setattr__(self, "phi", phi)

    @property
    def density(self):
        return np.exp(self.phi)

    def cell_density(self, grid):
        """Corner-averaged ``exp(phi)`` per cell."""
        return np.exp(self.phi)[grid.cells].mean(axis=1)

    @classmethod
    def uniform(cls, grid):
        return cls(np.zeros(grid.n_vertices))


def _as_tuple(value, dim, name):
    if np.isscalar(value):
        value = (value,) * dim
    value = tuple(value)
    if len(value) != dim:
        raise ConfigError(f"{name} needs {dim} entries, got {len(value)}")
    return value


def _sample(spec, grid, points, name):
    if callable(spec):
        vals = np.asarray(spec(*points.T), dtype=float)
    else:
        vals = compile_expression(spec, variables=("x", "y")[: grid.dim])(*points.T)
    vals = np.broadcast_to(vals, (len(points),)).astype(float)
    if not np.all(np.isfinite(vals)):
        raise ConfigError(f"{name} evaluates to non-finite values on the grid")
    return vals


def build_grid(kind, resolution, extent, phi=0.0, metric=None):
    """Build a weighted grid, its metric field and its weight field.

    Parameters
    ----------
    kind : {'interval', 'rectangle', 'torus', 'cylinder'}
        Domain type; fixes dimension and periodicity (cylinder: x periodic).
    resolution : int or sequence of int
        Vertex counts per axis.
    extent : float or sequence of float
        Axis lengths.
    phi : float, str or callable, optional
        Log-density, sampled at vertices.  Strings are expressions in ``x``,
        ``y``, ``pi`` and ``e``.
    metric : None, MetricField or mapping, optional
        ``None`` gives the Euclidean metric.  A mapping with keys ``g11``
        (and ``g12``, ``g22`` in 2-D) holds expressions or callables
        evaluated at cell centres.

    Returns
    -------
    grid : WeightedGrid
    metric : MetricField
    weight : WeightField
    """
    if kind not in KINDS:
        raise ConfigError(f"unknown kind {kind!r}; expected one of {sorted(KINDS)}")
    dim, periodic = KINDS[kind]
    resolution = _as_tuple(resolution, dim, "resolution")
    if not all(isinstance(n, (int, np.integer)) and not isinstance(n, bool) for n in resolution):
        raise ConfigError(f"resolution must be integers, got {resolution}")
    resolution = tuple(int(n) for n in resolution)
    extent = tuple(float(L) for L in _as_tuple(extent, dim, "extent"))
    grid = WeightedGrid(kind, resolution, extent, periodic)
    weight = WeightField(_sample(phi, grid, grid.vertex_coords, "phi"))
    if metric is None:
        mfield = MetricField.euclidean(grid)
    elif isinstance(metric, MetricField):
        mfield = metric
    else:
        keys = ("g11",) if dim == 1 else ("g11", "g12", "g22")
        unknown = set(metric) - set(keys)
        if unknown or set(keys) - set(metric):
            raise ConfigError(f"metric mapping needs exactly the keys {keys}")
        comps = [_sample(metric[k], grid, grid.cell_centers, k) for k in keys]
        mfield = MetricField(*comps)
    if mfield.dim != dim or mfield.n_cells != grid.n_cells:
        raise ConfigError("metric field does not match the grid")
    return grid, mfield, weight


def cell_measures(grid, metric, weight):
    """Weighted volume of every cell."""
    return weight.cell_density(grid) * metric.sqrt_det() * grid.cell_area


def vertex_masses(grid, metric, weight):
    """Measure attributed to each vertex: every cell splits its volume equally among its corners."""
    share = cell_measures(grid, metric, weight) / grid.cells.shape[1]
    return np.bincount(grid.cells.ravel(), weights=np.repeat(share, grid.cells.shape[1]),
                       minlength=grid.n_vertices)


def measure_of_vertex_region(grid, weight, metric, vertex_subset):
    """Weighted measure of the region represented by a set of vertices.

    Parameters
    ----------
    grid : WeightedGrid
    weight : WeightField
    metric : MetricField
    vertex_subset : array_like of int or bool
        Vertex indices, or a boolean mask over all vertices.

    Returns
    -------
    float
        Sum of the vertex masses in the subset.
    """
    sub = np.asarray(vertex_subset)
    if sub.dtype == bool:
        if sub.shape != (grid.n_vertices,):
            raise ConfigError("boolean vertex mask has the wrong length")
        sub = np.flatnonzero(sub)
    sub = np.unique(sub.astype(int))
    if sub.size == 0:
        raise ConfigError("vertex subset is empty")
    if sub[0] < 0 or sub[-1] >= grid.n_vertices:
        raise ConfigError("vertex index out of range")
    return float(vertex_masses(grid, metric, weight)[sub].sum())
