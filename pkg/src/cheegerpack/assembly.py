"""Finite-element assembly of the weighted Laplace-Beltrami operator.

Continuous P1 elements: segments in dim 1, each quad cell split into two
triangles in dim 2.  Per cell the coefficients are a density ``rho``
(weighted volume per coordinate volume) and an inverse metric ``A``, so

    K_ij = sum_cells rho * area * grad(phi_i)^T A grad(phi_j)
    B_ij = sum_cells rho * integral(phi_i phi_j)

For a static weighted manifold ``rho = exp(phi) sqrt(det g)`` and
``A = g^{-1}``.  The discrete eigenproblem is ``K u = -lambda B u``.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError
from .manifold import _QUAD, _TRI_SPLIT, MetricField, WeightField

__all__ = ["DiscreteOperator", "assemble", "assemble_coefficients", "export_coo"]

BCS = ("neumann", "dirichlet")


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Stiffness/mass pair restricted to the free vertices.

    Attributes
    ----------
    stiffness, mass : scipy.sparse.csr_matrix
        Matrices on the free vertices (Dirichlet rows/columns removed).
    bc : str
        ``'neumann'`` or ``'dirichlet'``.
    free_vertices : ndarray of int
        Grid vertex index of each matrix row.
    full_stiffness, full_mass : scipy.sparse.csr_matrix
        Unrestricted matrices on all vertices.
    cell_density : ndarray
        Per-cell density relative to coordinate volume.
    inv_metric : tuple of ndarray
        Per-cell inverse metric entries used for the stiffness.
    lumped : bool
        Whether the mass matrix is row-sum lumped.
    """

    grid: object = field(repr=False)
    stiffness: sp.csr_matrix = field(repr=False)
    mass: sp.csr_matrix = field(repr=False)
    bc: str
    free_vertices: np.ndarray = field(repr=False)
    full_stiffness: sp.csr_matrix = field(repr=False)
    full_mass: sp.csr_matrix = field(repr=False)
    cell_density: np.ndarray = field(repr=False)
    inv_metric: tuple = field(repr=False)
    lumped: bool = False

    @property
    def n_free(self):
        return len(self.free_vertices)

    def expand(self, vectors):
        """Lift free-vertex vectors (``(n_free,)`` or ``(n_free, m)``) to all vertices, zero elsewhere."""
        vectors = np.asarray(vectors)
        out = np.zeros((self.grid.n_vertices,) + vectors.shape[1:], dtype=vectors.dtype)
        out[self.free_vertices] = vectors
        return out

    def restrict(self, vectors):
        return np.asarray(vectors)[self.free_vertices]

    def inner(self, u, v=None):
        """Mass inner product of full-length vertex vectors."""
        v = u if v is None else v
        return float(u @ (self.full_mass @ v))

    def energy(self, u, v=None):
        """Stiffness bilinear form of full-length vertex vectors."""
        v = u if v is None else v
        return float(u @ (self.full_stiffness @ v))


def _local_gradients(spacing):
    """Barycentric gradients of the two reference triangles, shape ``(2, 3, 2)``."""
    grads = []
    for tri in _TRI_SPLIT:
        p = _QUAD[tri] * np.asarray(spacing)
        jac = np.stack([p[1] - p[0], p[2] - p[0]], axis=1)
        ginv = np.linalg.inv(jac)  # rows are gradients of lambda_1, lambda_2
        grads.append(np.vstack([-ginv.sum(axis=0), ginv]))
    return np.array(grads)


def _element_matrices(grid, density, inv_metric, lumped):
    """Local stiffness and mass blocks with their global vertex indices."""
    if grid.dim == 1:
        (h,) = grid.spacing
        (a11,) = inv_metric
        k = density * a11 / h
        m = density * h / 6.0
        kloc = k[:, None, None] * np.array([[1.0, -1.0], [-1.0, 1.0]])
        mloc = m[:, None, None] * np.array([[2.0, 1.0], [1.0, 2.0]])
        idx = grid.cells
    else:
        a11, a12, a22 = inv_metric
        A = np.stack([np.stack([a11, a12], -1), np.stack([a12, a22], -1)], -2)  # (C, 2, 2)
        G = _local_gradients(grid.spacing)  # (2, 3, 2)
        area = 0.5 * grid.cell_area
        # (C, 2 shapes, 3, 3)
        kloc = area * np.einsum("sai,cij,sbj->csab", G, A, G) * density[:, None, None, None]
        mref = (np.ones((3, 3)) + np.eye(3)) * (area / 12.0)
        mloc = np.repeat(density[:, None, None, None] * mref[None, None], 2, axis=1)
        kloc = kloc.reshape(-1, 3, 3)
        mloc = mloc.reshape(-1, 3, 3)
        idx = grid.triangles[0]
    if lumped:
        rows = mloc.sum(axis=2)
        mloc = np.zeros_like(mloc)
        n = mloc.shape[1]
        mloc[:, np.arange(n), np.arange(n)] = rows
    return idx, kloc, mloc


def _scatter(idx, local, n):
    rows = np.repeat(idx, idx.shape[1], axis=1).ravel()
    cols = np.tile(idx, (1, idx.shape[1])).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    # exact symmetry despite floating summation order
    return ((mat + mat.T) * 0.5).tocsr()


def assemble_coefficients(grid, density, inv_metric, bc="neumann", lumped=False):
    """Assemble from per-cell density and inverse-metric coefficients.

    Parameters
    ----------
    grid : WeightedGrid
    density : ndarray, shape (n_cells,)
        Weighted volume per unit coordinate volume in each cell.
    inv_metric : tuple of ndarray
        ``(a11,)`` in dim 1 or ``(a11, a12, a22)`` in dim 2, per cell.
    bc : {'neumann', 'dirichlet'}
    lumped : bool
        Replace the consistent mass matrix by its row-sum diagonal.

    Returns
    -------
    DiscreteOperator
    """
    if bc not in BCS:
        raise ConfigError(f"bc must be one of {BCS}, got {bc!r}")
    density = np.asarray(density, dtype=float)
    inv_metric = tuple(np.broadcast_to(np.asarray(a, dtype=float), (grid.n_cells,)) for a in inv_metric)
    if density.shape != (grid.n_cells,):
        raise ConfigError("density must have one value per cell")
    if len(inv_metric) != (1 if grid.dim == 1 else 3):
        raise ConfigError("inverse metric has the wrong number of components for the grid dimension")
    if bc == "dirichlet" and grid.boundary_vertices.size == 0:
        raise ConfigError(
            f"dirichlet boundary condition requires a boundary, but a {grid.kind} has none"
        )
    idx, kloc, mloc = _element_matrices(grid, density, inv_metric, lumped)
    K = _scatter(idx, kloc, grid.n_vertices)
    B = _scatter(idx, mloc, grid.n_vertices)
    if bc == "dirichlet":
        free = np.flatnonzero(~grid.boundary_mask)
        if free.size == 0:
            raise ConfigError("dirichlet problem has no interior vertices")
    else:
        free = np.arange(grid.n_vertices)
    Kf = K[free][:, free].tocsr()
    Bf = B[free][:, free].tocsr()
    free.setflags(write=False)
    return DiscreteOperator(grid, Kf, Bf, bc, free, K, B, density, inv_metric, lumped)


def assemble(grid, metric, weight, bc="neumann", lumped=False):
    """Assemble the weighted Laplace-Beltrami operator of ``(grid, metric, weight)``.

    Neumann is the natural condition; Dirichlet removes the boundary vertices.

    Raises
    ------
    ConfigError
        Dirichlet on a boundaryless grid, or mismatched field sizes.
    """
    if not isinstance(metric, MetricField) or not isinstance(weight, WeightField):
        raise ConfigError("metric and weight must be MetricField and WeightField instances")
    if metric.dim != grid.dim or metric.n_cells != grid.n_cells:
        raise ConfigError("metric field does not match the grid dimensions")
    if weight.phi.shape != (grid.n_vertices,):
        raise ConfigError("weight field does not match the grid vertex count")
    density = weight.cell_density(grid) * metric.sqrt_det()
    return assemble_coefficients(grid, density, metric.inverse_components(), bc, lumped)


def export_coo(matrix, path):
    """Write ``matrix`` as whitespace-separated ``row col value`` lines."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"% {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r} {c} {float(v)!r}\n")
