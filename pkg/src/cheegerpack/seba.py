"""Sparse eigenbasis approximation (SEBA) and its Cheeger-type certificates.

``seba_rotate`` finds a rotation ``R`` of ``k`` eigenvectors whose rotated
vectors are as sparse as possible: starting from ``R = I`` it alternates

    S <- columnwise-normalised soft_threshold(V R^T, mu),  mu = 0.99 / sqrt(p)
    R <- polar factor of S^T V

until ``R`` stops moving.  Rows of ``alpha = R`` give the combinations
``f_i = sum_j alpha_ij u_j``; thresholding them at the smallest level ``a``
that separates their supports yields disjointly supported functions whose
superlevel sets form a packing.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import CertificateError, ConfigError, NumericalError
from .nodal import nodal_domains

__all__ = [
    "soft_threshold",
    "SebaRotation",
    "seba_rotate",
    "seba_vectors",
    "canonicalize",
    "min_disjoint_threshold",
    "SebaResult",
    "SebaCertificate",
    "seba_combine",
    "seba_certify",
]


def soft_threshold(f, a):
    """``sign(f) * max(|f| - a, 0)`` elementwise.

    Raises
    ------
    ConfigError
        If ``a < 0``.
    """
    if a < 0:
        raise ConfigError(f"threshold must be non-negative, got {a}")
    f = np.asarray(f, dtype=float)
    return np.sign(f) * np.maximum(np.abs(f) - a, 0.0)


@dataclass(frozen=True, eq=False)
class SebaRotation:
    """Result of the SEBA iteration.

    ``alpha`` has shape ``(l, k)``; ``sparse`` holds the corresponding
    sparse vectors ``S`` (``(p, l)``) and ``reliability`` their maxima.
    """

    alpha: np.ndarray
    sparse: np.ndarray = field(repr=False)
    reliability: np.ndarray
    iterations: int
    converged: bool


def seba_rotate(eigenvectors, l=None, max_iter=5000, conv_tol=1e-14):
    """Rotate ``k`` orthonormal vectors towards sparsity.

    Parameters
    ----------
    eigenvectors : ndarray, shape (p, k)
        Columns with (approximately) orthonormal Euclidean inner products.
    l : int, optional
        Number of combinations to keep (``l <= k``); the ``l`` rows whose
        sparse vectors have the largest maxima are kept.  Defaults to ``k``.
    max_iter : int
    conv_tol : float
        Stop when ``||R - R_old||_F < conv_tol``.

    Returns
    -------
    SebaRotation
        With ``converged=False`` (and the last iterate) if ``max_iter`` is
        exhausted.
    """
    V = np.asarray(eigenvectors, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    p, k = V.shape
    l = k if l is None else int(l)
    if not 1 <= l <= k:
        raise ConfigError(f"l must satisfy 1 <= l <= k = {k}, got {l}")
    mu = 0.99 / np.sqrt(p)
    R = np.eye(k)
    converged = False
    it = 0
    S = V.copy()
    for it in range(1, max_iter + 1):
        Z = V @ R.T
        S = soft_threshold(Z, mu)
        norms = np.linalg.norm(S, axis=0)
        S = S / np.where(norms > 0, norms, 1.0)
        U, _, Wt = np.linalg.svd(S.T @ V, full_matrices=False)
        R_old = R
        R = U @ Wt
        if np.linalg.norm(R - R_old) < conv_tol:
            converged = True
            break
    # final sparse vectors for the returned rotation
    Z = V @ R.T
    S = soft_threshold(Z, mu)
    norms = np.linalg.norm(S, axis=0)
    S = S / np.where(norms > 0, norms, 1.0)
    flip = np.where(np.max(S, axis=0) < np.max(-S, axis=0), -1.0, 1.0)
    S = S * flip
    R = R * flip[:, None]
    rel = np.max(S, axis=0)
    keep = np.sort(np.argsort(-rel, kind="stable")[:l])
    return SebaRotation(R[keep], S[:, keep], rel[keep], it, converged)


def seba_vectors(basis, k, normalization="max", op=None):
    """First ``k`` eigenvectors, rescaled, and the SEBA input matrix.

    Parameters
    ----------
    basis : SpectralBasis
    k : int
    normalization : {'max', 'mass'}
        ``'max'`` rescales every eigenvector to ``max|u| = 1``; ``'mass'``
        keeps the mass-orthonormal scaling.
    op : DiscreteOperator, optional
        Defaults to ``basis.op``.

    Returns
    -------
    U : ndarray, shape (n_vertices, k)
        The (rescaled) eigenvectors used to form combinations.
    V : ndarray, shape (n_free, k)
        ``sqrt(lumped mass) * u_j / ||u_j||`` on the free vertices, columns
        near-orthonormal.
    """
    op = basis.op if op is None else op
    if not 1 <= k <= len(basis):
        raise ConfigError(f"k must be between 1 and {len(basis)}")
    U = np.array(basis.eigenvectors[:, :k], dtype=float)
    if normalization == "max":
        U = U / np.max(np.abs(U), axis=0)
    elif normalization != "mass":
        raise ConfigError("normalization must be 'max' or 'mass'")
    w = np.asarray(op.full_mass.sum(axis=1)).ravel()
    V = (np.sqrt(w)[:, None] * U)[op.free_vertices]
    V = V / np.linalg.norm(V, axis=0)
    return U, V


def canonicalize(alpha, U, coords):
    """Sign and order rows of ``alpha``.

    Each combination ``f_i = U alpha_i`` is signed so its largest-magnitude
    value is positive; rows are sorted by the centroid (lexicographic over
    axes) of the support of ``f_i`` above half its maximum.
    """
    alpha = np.array(alpha, dtype=float)
    F = U @ alpha.T
    keys = []
    for i in range(alpha.shape[0]):
        f = F[:, i]
        j = int(np.argmax(np.abs(f)))
        if f[j] < 0:
            alpha[i] *= -1
            f = -f
        sup = f >= 0.5 * f.max()
        keys.append(tuple(coords[sup].mean(axis=0)))
    order = sorted(range(len(keys)), key=lambda i: keys[i])
    return alpha[order]


def _supports(F, a):
    return np.abs(F) > a


def _disjoint(sup):
    return bool(np.all(sup.sum(axis=1) <= 1))


def min_disjoint_threshold(combinations, rtol=1e-4):
    """Smallest ``a`` making the thresholded supports pairwise disjoint.

    Parameters
    ----------
    combinations : ndarray, shape (n, l)
        The functions ``f_i`` as columns, ``l >= 2``.
    rtol : float
        Bisection tolerance relative to ``max|f|``.

    Returns
    -------
    float
        Upper end of the final bisection bracket (supports disjoint, all
        thresholded functions nonzero).

    Raises
    ------
    NumericalError
        If no threshold separates the supports while keeping every function
        nonzero.
    """
    F = np.asarray(combinations, dtype=float)
    if F.ndim != 2 or F.shape[1] < 2:
        raise ConfigError("need at least two combinations as columns")
    if _disjoint(_supports(F, 0.0)):
        return 0.0
    fmax = float(np.max(np.abs(F)))
    # all functions stay nonzero for a < min_i max|f_i|
    hi = float(np.min(np.max(np.abs(F), axis=0)))
    hi_probe = hi * (1 - 1e-12)
    if not _disjoint(_supports(F, hi_probe)):
        raise NumericalError(
            "no threshold yields pairwise disjoint nonzero supports "
            "(some combination is dominated everywhere by another)"
        )
    lo, hi = 0.0, hi_probe
    while hi - lo > rtol * fmax:
        mid = 0.5 * (lo + hi)
        if _disjoint(_supports(F, mid)):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True, eq=False)
class SebaResult:
    alpha: np.ndarray
    combinations: np.ndarray = field(repr=False)
    a: float
    sparse_functions: np.ndarray = field(repr=False)
    retention: np.ndarray
    disjoint: bool


def seba_combine(basis, alpha, a, normalization="max", op=None):
    """Form ``f_i``, ``tau_a f_i`` and their mass retentions."""
    op = basis.op if op is None else op
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
    k = alpha.shape[1]
    U, _ = seba_vectors(basis, k, normalization, op)
    F = U @ alpha.T
    T = soft_threshold(F, a)
    BF = op.full_mass @ F
    BT = op.full_mass @ T
    ret = np.einsum("ij,ij->j", T, BT) / np.einsum("ij,ij->j", F, BF)
    sup = _supports(T, 0.0)
    disjoint = _disjoint(sup) and bool(np.all(sup.any(axis=0)))
    return SebaResult(alpha, F, float(a), T, ret, disjoint)


@dataclass(frozen=True, eq=False)
class SebaCertificate:
    """Per-combination sweeps of ``tau_a f_i`` and the packing certificate.

    Attributes
    ----------
    rayleigh : ndarray
        Rayleigh quotient of ``tau_a f_i`` on its chosen nodal domain.
    chain : ndarray
        ``-rayleigh_i * retention_i``; each must dominate ``lambda_k``.
    lambda_bound : float
        ``2 sqrt(-lambda_k) * max_j ||f_j|| / ||tau_a f_j||``.
    rayleigh_bound : float
        ``max_i 2 sqrt(rayleigh_i)`` (admissibility threshold of the sweeps).
    """

    result: SebaResult
    lambda_k: float
    domains: tuple
    rayleigh: np.ndarray
    chain: np.ndarray
    chain_holds: bool
    sweeps: tuple = field(repr=False)
    packing: object = field(repr=False)
    lambda_bound: float
    rayleigh_bound: float
    max_ratio: float
    s_upper: np.ndarray
    smeasure_bounds: np.ndarray

    def as_dict(self):
        return {
            "lambda_k": self.lambda_k,
            "threshold_a": self.result.a,
            "alpha": self.result.alpha.tolist(),
            "retention": self.result.retention.tolist(),
            "rayleigh_on_domain": self.rayleigh.tolist(),
            "rayleigh_chain": self.chain.tolist(),
            "rayleigh_chain_holds": self.chain_holds,
            "ratios": [float(p.ratio) for p in self.packing.sets],
            "max_ratio": self.max_ratio,
            "bound_lambda_retention": self.lambda_bound,
            "bound_rayleigh": self.rayleigh_bound,
            "s_upper": self.s_upper.tolist(),
            "level_upper": np.sqrt(self.s_upper).tolist(),
            "S_measure_estimate": [sw.S_measure_estimate for sw in self.sweeps],
            "S_measure_lower_bound": self.smeasure_bounds.tolist(),
            "certificate": self.packing.certificate,
        }


def seba_certify(grid, metric, weight, basis, alpha, a, mode="dirichlet", n_levels=256,
                 selection="min_ratio", normalization="max", op=None, flowmap=None):
    """Certify a SEBA packing.

    For every combination the nodal domain of ``tau_a f_i`` with the
    smallest Rayleigh quotient ``R_i`` is swept with admissibility
    ``ratio <= 2 sqrt(R_i)``; one admissible level per combination gives
    the packing, which must satisfy
    ``lambda_k <= -max_ratio**2 / 4 * min_j retention_j``.

    Parameters
    ----------
    grid, metric, weight
        The static domain (only ``grid`` is used when ``flowmap`` is given).
    basis : SpectralBasis
        ``alpha`` combines its first ``k = alpha.shape[1]`` vectors.
    alpha : ndarray, shape (l, k)
    a : float
        Threshold; thresholded supports must be disjoint.
    mode : {'neumann', 'dirichlet'}
    op : DiscreteOperator, optional
        Operator for Rayleigh quotients and norms; defaults to ``basis.op``.
    flowmap : FlowMap, optional
        Use dynamic (time-averaged advected) perimeters.

    Raises
    ------
    NumericalError
        Thresholded functions vanish or overlap.
    EmptyAdmissibleSetError
        Some sweep has no admissible level.
    CertificateError
        The certificate or the Rayleigh chain fails.
    """
    from .levelset import _run_sweep, _static_lengths, pack_from_items

    op = basis.op if op is None else op
    res = seba_combine(basis, alpha, a, normalization, op)
    if not res.disjoint:
        raise NumericalError("thresholded combinations are zero or have overlapping supports")
    k = res.alpha.shape[1]
    lam_k = float(basis.eigenvalues[k - 1])
    K, B = op.full_stiffness, op.full_mass
    if flowmap is None:
        density = weight.cell_density(grid) * metric.sqrt_det()
        seg, bnd = _static_lengths(grid, metric, weight) if grid.dim == 2 else (None, None)
        phi = weight.phi
    else:
        from .dynamics import _dynamic_lengths

        density = op.cell_density
        seg, bnd = _dynamic_lengths(grid, flowmap)
        phi = np.zeros(grid.n_vertices)
    domains, rayleigh, items = [], [], []
    for i in range(res.sparse_functions.shape[1]):
        t = res.sparse_functions[:, i]
        dec = nodal_domains(grid, t, zero_tol=0.0)
        best = None
        for dom in dec.domains:
            v = np.zeros_like(t)
            v[dom.vertices] = t[dom.vertices]
            r = float(v @ (K @ v)) / float(v @ (B @ v))
            if best is None or r < best[0]:
                best = (r, dom)
        r, dom = best
        domains.append(dom)
        rayleigh.append(r)
        sw, geom, lev = _run_sweep(grid, density, t, dom, -r, mode, n_levels, seg, bnd, phi)
        items.append((t, dom, sw, lev))
    rayleigh = np.array(rayleigh)
    chain = -rayleigh * res.retention
    chain_holds = bool(np.all(lam_k <= chain + 1e-10 * np.maximum(1.0, np.abs(chain))))
    if not chain_holds:
        raise CertificateError(
            f"Rayleigh chain violated: lambda_k = {lam_k:.6g} > min(-R_i * retention_i) = {chain.max():.6g}"
        )
    min_ret = float(np.min(res.retention))
    packing = pack_from_items(grid, items, selection, lam_k, k=k, scale=min_ret)
    sweeps = tuple(it[2] for it in items)
    return SebaCertificate(
        result=res,
        lambda_k=lam_k,
        domains=tuple(domains),
        rayleigh=rayleigh,
        chain=chain,
        chain_holds=chain_holds,
        sweeps=sweeps,
        packing=packing,
        lambda_bound=float(2.0 * np.sqrt(-lam_k) / np.sqrt(min_ret)),
        rayleigh_bound=float(np.max(2.0 * np.sqrt(rayleigh))),
        max_ratio=float(packing.max_ratio),
        s_upper=np.array([sw.s_upper for sw in sweeps]),
        smeasure_bounds=np.array([sw.S_measure_lower_bound for sw in sweeps]),
    )
