"""Smallest-magnitude eigenpairs of ``K u = -lambda B u``.

Large problems use ARPACK Lanczos in shift-invert mode with a small
negative shift (``K + sigma B`` is then positive definite even for the
Neumann kernel); small problems fall back to a dense solve.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse.linalg as sla

from .errors import ConfigError, ConvergenceError

__all__ = ["SpectralBasis", "smallest_eigenpairs", "residuals"]

_DENSE_LIMIT = 400


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """Ordered eigenpairs with mass-orthonormal eigenvectors.

    Attributes
    ----------
    eigenvalues : ndarray
        Non-increasing, all ``<= 0``.
    eigenvectors : ndarray, shape (n_vertices, count)
        Values at every grid vertex (zero on Dirichlet boundary vertices).
    residuals : ndarray
        ``||K u + lambda B u|| / ||B u||`` per pair.
    bc : str
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)
    residuals: np.ndarray
    bc: str
    op: object = field(default=None, repr=False)

    def __len__(self):
        return len(self.eigenvalues)

    def vector(self, k):
        """Eigenvector of the ``k``-th pair (1-based, eigenvalues in decreasing order)."""
        return self.eigenvectors[:, k - 1]


def residuals(op, eigenvalues, vectors):
    """Relative residuals on the free vertices; ``vectors`` are full-length."""
    V = op.restrict(vectors)
    KV = op.stiffness @ V
    BV = op.mass @ V
    r = KV + BV * np.asarray(eigenvalues)[None, :]
    return np.linalg.norm(r, axis=0) / np.linalg.norm(BV, axis=0)


def _canonical_sign(v):
    """Flip so the first entry of non-negligible magnitude is positive."""
    a = np.abs(v)
    i = int(np.flatnonzero(a >= a.max() * 1e-3)[0])
    return v if v[i] >= 0 else -v


def smallest_eigenpairs(op, count, tol=1e-8, max_restarts=500, seed=0):
    """Compute the ``count`` eigenpairs of ``op`` nearest zero.

    Parameters
    ----------
    op : DiscreteOperator
    count : int
        Number of pairs, ``1 <= count <= op.n_free``.
    tol : float
        Bound on the stored relative residuals.
    max_restarts : int
        Lanczos restart budget.
    seed : int
        Seed of the Lanczos starting vector.

    Returns
    -------
    SpectralBasis

    Raises
    ------
    ConvergenceError
        No convergence within the budget, or residuals above ``tol``.
    ConfigError
        Invalid ``count`` or ``tol``.
    """
    n = op.n_free
    if not (1 <= int(count) <= n):
        raise ConfigError(f"count must be between 1 and the {n} free vertices, got {count}")
    if not tol > 0:
        raise ConfigError("tol must be positive")
    count = int(count)
    K, B = op.stiffness, op.mass
    if n <= _DENSE_LIMIT or count >= n - 1:
        mu, V = la.eigh(K.toarray(), B.toarray(), subset_by_index=[0, count - 1])
    else:
        # shift on the scale of the smallest stiffness/mass ratio
        scale = float(np.min(K.diagonal() / B.diagonal()))
        sigma = -1e-4 * scale
        v0 = np.random.default_rng(seed).standard_normal(n)
        try:
            mu, V = sla.eigsh(
                K, k=count, M=B, sigma=sigma, which="LM", v0=v0,
                maxiter=max_restarts, tol=min(tol, 1e-10) * 1e-2,
            )
        except sla.ArpackNoConvergence as exc:
            raise ConvergenceError(
                f"Lanczos did not converge within {max_restarts} restarts "
                f"({len(exc.eigenvalues)} of {count} pairs converged)"
            ) from None
    # B-orthonormalise the block (degenerate clusters may come back skewed)
    C = V.T @ (B @ V)
    L = np.linalg.cholesky(0.5 * (C + C.T))
    V = la.solve_triangular(L, V.T, lower=True).T
    lam = -mu
    order = np.argsort(-lam, kind="stable")
    lam = np.minimum(lam[order], 0.0)
    V = np.column_stack([_canonical_sign(V[:, i]) for i in order])
    full = op.expand(V)
    res = residuals(op, lam, full)
    if np.any(~np.isfinite(res)) or np.any(res > tol):
        raise ConvergenceError(
            f"residuals exceed tolerance {tol:g}: max {np.max(res):.3e}", residuals=res
        )
    for a in (lam, full, res):
        a.setflags(write=False)
    return SpectralBasis(lam, full, res, op.bc, op)
