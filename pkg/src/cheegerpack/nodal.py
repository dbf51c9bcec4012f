"""Nodal domains of vertex functions and the nodal count ``r_k``.

Domains are connected components of ``{u > tol}`` and ``{u < -tol}`` under
grid-edge adjacency (axis neighbours only, periodic axes wrap).
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import ConfigError, NodalError

__all__ = [
    "NodalDomain",
    "NodalDecomposition",
    "nodal_domains",
    "default_zero_tol",
    "RkResult",
    "eigen_clusters",
    "reflection_adapted",
    "r_k_from_basis",
]

ZERO_TOL_REL = 1e-8


@dataclass(frozen=True, eq=False)
class NodalDomain:
    sign: int
    vertices: np.ndarray = field(repr=False)

    @property
    def size(self):
        return len(self.vertices)


@dataclass(frozen=True, eq=False)
class NodalDecomposition:
    """Signed connected components of a vertex function.

    Domains are ordered by their smallest vertex index.
    """

    domains: tuple
    zero_set: np.ndarray = field(repr=False)
    zero_tol: float
    n_vertices: int = field(repr=False)

    def __len__(self):
        return len(self.domains)

    @property
    def count(self):
        return len(self.domains)

    def labels(self):
        """Per-vertex labels: ``0`` on the zero set, ``i + 1`` on domain ``i``."""
        lab = np.zeros(self.n_vertices, dtype=int)
        for i, d in enumerate(self.domains):
            lab[d.vertices] = i + 1
        return lab


def default_zero_tol(u):
    return ZERO_TOL_REL * float(np.max(np.abs(u)))


def nodal_domains(grid, u, zero_tol=None):
    """Decompose ``u`` into nodal domains.

    Parameters
    ----------
    grid : WeightedGrid
    u : array_like, shape (n_vertices,)
    zero_tol : float, optional
        Values with ``|u| <= zero_tol`` form the zero set.  Defaults to
        ``1e-8 * max|u|``.

    Returns
    -------
    NodalDecomposition

    Raises
    ------
    NodalError
        If every value lies within ``zero_tol`` of zero.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (grid.n_vertices,):
        raise ConfigError(f"u must have {grid.n_vertices} entries, got shape {u.shape}")
    if zero_tol is None:
        zero_tol = default_zero_tol(u)
    if zero_tol < 0:
        raise ConfigError("zero_tol must be non-negative")
    sign = np.where(u > zero_tol, 1, np.where(u < -zero_tol, -1, 0))
    if not np.any(sign):
        raise NodalError("function vanishes within zero_tol everywhere: no nodal domains")
    e = grid.edges
    keep = (sign[e[:, 0]] != 0) & (sign[e[:, 0]] == sign[e[:, 1]])
    e = e[keep]
    n = grid.n_vertices
    adj = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    _, comp = connected_components(adj, directed=False)
    nz = np.flatnonzero(sign)
    comps = comp[nz]
    order = np.argsort(comps, kind="stable")
    groups = np.split(nz[order], np.flatnonzero(np.diff(comps[order])) + 1)
    groups.sort(key=lambda g: g[0])
    domains = []
    for g in groups:
        g = np.sort(g)
        g.setflags(write=False)
        domains.append(NodalDomain(int(sign[g[0]]), g))
    zero = np.flatnonzero(sign == 0)
    zero.setflags(write=False)
    return NodalDecomposition(tuple(domains), zero, float(zero_tol), n)


@dataclass(frozen=True, eq=False)
class RkResult:
    """Maximal nodal count among eigenfunctions with eigenvalue ``>= lambda_k``.

    ``index`` is the 1-based basis index of the witness, or ``None`` when
    the witness is a rotation inside an eigenvalue cluster.
    """

    r_k: int
    k: int
    eigenvalue: float
    index: object
    vector: np.ndarray = field(repr=False)
    source: str


def eigen_clusters(eigenvalues, rtol=0.02, atol=1e-8):
    """Group consecutive (sorted) eigenvalues that agree within a relative tolerance.

    Returns a list of index arrays (0-based).  Discretisation splits exact
    multiplicities slightly, which is why a relative tolerance is used.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    groups, cur = [], [0]
    for i in range(1, len(lam)):
        ref = lam[cur[0]]
        if abs(lam[i] - ref) <= atol + rtol * max(abs(ref), abs(lam[i])):
            cur.append(i)
        else:
            groups.append(np.array(cur))
            cur = [i]
    groups.append(np.array(cur))
    return groups


def _reflection_permutation(grid, axis):
    """Vertex permutation of the reflection ``x_axis -> -x_axis`` (periodic) or ``L - x_axis``."""
    idx = np.indices(grid.resolution)
    n = grid.resolution[axis]
    if grid.periodic[axis]:
        idx[axis] = (-idx[axis]) % n
    else:
        idx[axis] = n - 1 - idx[axis]
    return np.ravel_multi_index(tuple(idx.reshape(grid.dim, -1)), grid.resolution)


def reflection_adapted(grid, mass, vectors):
    """Rotate a cluster of eigenvectors into joint eigenvectors of the axis reflections.

    Each reflection maps the cluster span approximately onto itself; we
    diagonalise a weighted sum of the projected reflections, which separates
    functions of definite parity per axis (e.g. ``cos x cos y`` from
    ``cos(x + y)`` on the torus).  Projections use the row-sum lumped mass,
    which is reflection invariant whenever the weight and metric are, unlike
    the consistent mass on a diagonally split grid.

    Parameters
    ----------
    grid : WeightedGrid
    mass : sparse matrix
        Full-vertex mass matrix.
    vectors : ndarray, shape (n_vertices, m)
        Cluster basis.

    Returns
    -------
    ndarray, shape (n_vertices, m)
        Same span, columns orthonormal in the lumped inner product.
    """
    V = np.asarray(vectors, dtype=float)
    if V.shape[1] == 1:
        return V.copy()
    w = np.asarray(mass.sum(axis=1)).ravel()
    sw = np.sqrt(w)[:, None]
    Q, _ = np.linalg.qr(sw * V)
    V = Q / sw
    P = np.zeros((V.shape[1], V.shape[1]))
    for a, weight in zip(range(grid.dim), (1.0, 2.0)):
        perm = _reflection_permutation(grid, a)
        Pa = (w[:, None] * V).T @ V[perm]
        P += weight * 0.5 * (Pa + Pa.T)
    _, R = np.linalg.eigh(P)
    return V @ R


def r_k_from_basis(grid, basis, k, zero_tol=None, trial_vectors=None, symmetry=False,
                   cluster_rtol=0.02):
    """Nodal count ``r_k`` over the computed eigenfunctions.

    Candidates are every basis vector whose eigenvalue is ``>= lambda_k``,
    where eigenvalues in the same cluster as ``lambda_k`` count as equal.
    Optionally candidates are extended by rotations within each cluster:
    ``trial_vectors`` are projected onto every cluster, and ``symmetry``
    adds the reflection-adapted cluster basis.

    Parameters
    ----------
    grid : WeightedGrid
    basis : SpectralBasis
    k : int
        1-based index, ``k <= len(basis)``.
    zero_tol : float, optional
        Passed to :func:`nodal_domains` (default relative ``1e-8``).
    trial_vectors : ndarray, shape (n_vertices, m), optional
    symmetry : bool
    cluster_rtol : float

    Returns
    -------
    RkResult
    """
    if not (1 <= k <= len(basis)):
        raise ConfigError(f"k must be between 1 and {len(basis)}, got {k}")
    lam = basis.eigenvalues
    clusters = eigen_clusters(lam, rtol=cluster_rtol)
    kc = next(i for i, c in enumerate(clusters) if (k - 1) in c)
    clusters = clusters[: kc + 1]
    candidates = []
    for c in clusters:
        for i in c:
            candidates.append((basis.eigenvectors[:, i], float(lam[i]), int(i) + 1, "basis"))
    mass = basis.op.full_mass if basis.op is not None else None
    if (symmetry or trial_vectors is not None) and mass is None:
        raise ConfigError("cluster rotations need the basis operator (mass matrix)")
    for c in clusters:
        V = basis.eigenvectors[:, c]
        # conservative: the least negative eigenvalue of the cluster
        lam_c = float(np.max(lam[c]))
        if symmetry and len(c) > 1:
            for v in reflection_adapted(grid, mass, V).T:
                candidates.append((v, lam_c, None, "reflection"))
        if trial_vectors is not None:
            T = np.asarray(trial_vectors, dtype=float).reshape(grid.n_vertices, -1)
            proj = V @ (V.T @ (mass @ T))
            for j in range(T.shape[1]):
                t = T[:, j]
                tn = np.sqrt(max(t @ (mass @ t), 0.0))
                pn = np.sqrt(max(proj[:, j] @ (mass @ proj[:, j]), 0.0))
                if tn > 0 and pn > 0.5 * tn:
                    candidates.append((proj[:, j], lam_c, None, "trial"))
    best = None
    for v, lv, idx, src in candidates:
        cnt = nodal_domains(grid, v, zero_tol).count
        if best is None or cnt > best[0]:
            best = (cnt, v, lv, idx, src)
    cnt, v, lv, idx, src = best
    v = np.array(v)
    v.setflags(write=False)
    return RkResult(int(cnt), int(k), lv, idx, v, src)
