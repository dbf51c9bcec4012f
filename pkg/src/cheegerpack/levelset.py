"""Superlevel-set sweeps of ``u**2`` inside a nodal domain, and packings.

Inside a nodal domain ``G`` with sign ``sigma`` the domain field
``f = sigma * u`` is positive, and ``G_s = {u**2 > s} = {f > sqrt(s)}``.
Level sets are traced on the P1 interpolant of ``f`` over the same
triangulation used for assembly (marching squares with the saddle
ambiguity fixed by the cell diagonal); in dim 1 crossings are found by
linear root interpolation.

All integrals over ``s`` use the trapezoid rule on the sampled levels,
including the top level ``max u**2`` where volume and perimeter vanish, so
the probability measure ``P`` on levels has total mass one exactly.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import CertificateError, ConfigError, EmptyAdmissibleSetError
from .nodal import nodal_domains, r_k_from_basis

__all__ = [
    "SweepRecord",
    "SweepResult",
    "SMeasureBound",
    "DomainGeometry",
    "superlevel_sweep",
    "smeasure_bound",
    "contour_segments",
    "chain_segments",
    "coarea_integral",
    "PackedSet",
    "Packing",
    "build_packing",
    "pack_from_items",
]

MODES = ("neumann", "dirichlet")
_CONST_RTOL = 1e-6


@dataclass(frozen=True)
class SweepRecord:
    s: float
    volume: float
    perimeter: float
    ratio: float
    admissible: bool


@dataclass(frozen=True)
class SMeasureBound:
    """Lower bound on the Lebesgue measure of the admissible level set.

    ``degenerate`` is set (and ``value`` is 0) when the ratio profile is
    constant, i.e. ``hbar == inf h``.
    """

    value: float
    degenerate: bool
    hbar: float
    inf_ratio: float


@dataclass(frozen=True, eq=False)
class SweepResult:
    """Per-level records of a sweep and the derived admissible-set data.

    Attributes
    ----------
    records : tuple of SweepRecord
        Ordered by increasing ``s``; the last record is the top level.
    lam : float
        Eigenvalue used for admissibility (``ratio <= 2 sqrt(-lam)``).
    weights : ndarray
        Trapezoid weights of the levels.
    domain_measure : float
        ``mu(G)``.
    l2_norm_sq : float
        ``||u||^2`` on ``G`` (layer-cake quadrature of the volumes).
    hbar : float
        ``P``-average of the ratio.
    S_measure_estimate : float
        Quadrature measure of the admissible levels.
    S_measure_lower_bound : float
    bound_degenerate : bool
    slack : float
        ``max(0, lower bound - estimate)``; zero whenever the discrete
        inequality holds.
    s_upper : float
        Supremum of admissible levels, refined by linear interpolation of
        the ratio; ``nan`` when none is admissible.
    """

    records: tuple
    lam: float
    mode: str
    weights: np.ndarray = field(repr=False)
    domain_measure: float
    l2_norm_sq: float
    hbar: float
    S_measure_estimate: float
    S_measure_lower_bound: float
    bound_degenerate: bool
    slack: float
    s_upper: float
    touches_boundary: np.ndarray = field(repr=False, default=None)

    @property
    def ratio_bound(self):
        return 2.0 * np.sqrt(max(-self.lam, 0.0))

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    @property
    def s(self):
        return self.column("s")

    @property
    def ratio(self):
        return self.column("ratio")

    @property
    def admissible(self):
        return self.column("admissible").astype(bool)

    @property
    def nonempty(self):
        return bool(self.admissible.any())

    def admissible_intervals(self):
        """Maximal runs of consecutive admissible levels as ``(s_first, s_last)`` pairs."""
        adm = self.admissible
        s = self.s
        out, start = [], None
        for i, a in enumerate(adm):
            if a and start is None:
                start = i
            if not a and start is not None:
                out.append((float(s[start]), float(s[i - 1])))
                start = None
        if start is not None:
            out.append((float(s[start]), float(s[-1])))
        return out

    def min_ratio(self):
        r = self.ratio
        return float(np.min(r[np.isfinite(r)])) if np.any(np.isfinite(r)) else float("inf")


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------


def _metric_length(d, g11, g12, g22, phi):
    """``exp(phi) * sqrt(d^T g d)`` for arrays of 2-vectors ``d``."""
    q = g11 * d[..., 0] ** 2 + 2.0 * g12 * d[..., 0] * d[..., 1] + g22 * d[..., 1] ** 2
    return np.exp(phi) * np.sqrt(np.maximum(q, 0.0))


@dataclass(eq=False)
class LevelGeometry:
    """Sub-cell geometry of ``{f > c}`` at one level (dim 2).

    ``p1``/``p2`` are segment endpoints (unwrapped coordinates), ``tri`` the
    owning triangle index into the domain's triangle subset, ``bary`` the
    barycentric weights of the segment midpoints w.r.t. the triangle's
    vertices, ``keys`` the mesh edges carrying each endpoint.
    """

    volume: float
    p1: np.ndarray
    p2: np.ndarray
    tri: np.ndarray
    bary: np.ndarray
    key1: np.ndarray
    key2: np.ndarray
    boundary_length_pts: tuple  # (q1, q2, tri) of Dirichlet boundary-edge pieces
    touches_boundary: bool


class DomainGeometry:
    """Level-set geometry of a positive vertex field ``f`` restricted to a region.

    Parameters
    ----------
    grid : WeightedGrid
    density : ndarray
        Per-cell weighted-volume density (relative to coordinate volume).
    f : ndarray
        Vertex values; the region is where ``f > 0``.
    vertices : ndarray of int
        Vertices of the region; used to select the triangles/segments that
        can intersect ``{f > c}`` for ``c >= 0``.
    """

    def __init__(self, grid, density, f, vertices):
        self.grid = grid
        self.f = np.asarray(f, dtype=float)
        self.density = np.asarray(density, dtype=float)
        inside = np.zeros(grid.n_vertices, dtype=bool)
        inside[vertices] = True
        if grid.dim == 2:
            tri, tri_cell, tri_xy = grid.triangles
            sel = inside[tri].any(axis=1)
            self.tri_shape = np.flatnonzero(sel) % 2  # lower / upper triangle of the cell
            self.tri = tri[sel]
            self.tri_cell = tri_cell[sel]
            self.xy = tri_xy[sel]
            self.fv = self.f[self.tri]
            self.rho_area = self.density[self.tri_cell] * (0.5 * grid.cell_area)
            # boundary edges of the grid lying in selected triangles
            self._prepare_boundary_edges(inside)
        else:
            cells = grid.cells
            sel = inside[cells].any(axis=1)
            self.seg = cells[sel]
            self.seg_cell = np.flatnonzero(sel)
            self.x = grid.vertex_coords[self.seg, 0]  # (S, 2)
            self.fv = self.f[self.seg]
            self.rho_len = self.density[self.seg_cell] * grid.cell_area

    # -- dim 2 ---------------------------------------------------------------
    def _prepare_boundary_edges(self, inside):
        grid = self.grid
        if grid.boundary_vertices.size == 0:
            self.bedge = np.zeros((0, 2), dtype=int)
            self.bedge_xy = np.zeros((0, 2, 2))
            self.bedge_cell = np.zeros(0, dtype=int)
            return
        bm = grid.boundary_mask
        edges, xys, cells = [], [], []
        # triangle edges (0,1), (1,2), (2,0) with both ends on the same boundary side
        for a, b in ((0, 1), (1, 2), (2, 0)):
            va, vb = self.tri[:, a], self.tri[:, b]
            both = bm[va] & bm[vb]
            if not np.any(both):
                continue
            pa, pb = self.xy[both, a], self.xy[both, b]
            sa = grid.points_on_boundary(pa)
            sb = grid.points_on_boundary(pb)
            same = np.any((sa == sb) & (sa != 0), axis=1)
            idx = np.flatnonzero(both)[same]
            edges.append(np.stack([va[idx], vb[idx]], 1))
            xys.append(np.stack([self.xy[idx, a], self.xy[idx, b]], 1))
            cells.append(self.tri_cell[idx])
        if edges:
            self.bedge = np.concatenate(edges)
            self.bedge_xy = np.concatenate(xys)
            self.bedge_cell = np.concatenate(cells)
        else:
            self.bedge = np.zeros((0, 2), dtype=int)
            self.bedge_xy = np.zeros((0, 2, 2))
            self.bedge_cell = np.zeros(0, dtype=int)

    def level_2d(self, c):
        """Clip every selected triangle against ``f > c``."""
        fv, xy = self.fv, self.xy
        above = fv > c
        n_above = above.sum(axis=1)
        frac = (n_above == 3).astype(float)
        cut = (n_above == 1) | (n_above == 2)
        idx = np.flatnonzero(cut)
        ab = above[idx]
        lone = np.where(n_above[idx] == 1, np.argmax(ab, axis=1), np.argmin(ab, axis=1))
        o1 = (lone + 1) % 3
        o2 = (lone + 2) % 3
        r = np.arange(len(idx))
        f0, f1, f2 = fv[idx, lone], fv[idx, o1], fv[idx, o2]
        t1 = (f0 - c) / (f0 - f1)
        t2 = (f0 - c) / (f0 - f2)
        small = t1 * t2
        frac[idx] = np.where(n_above[idx] == 1, small, 1.0 - small)
        volume = float(np.dot(frac, self.rho_area))
        x0, x1, x2 = xy[idx, lone], xy[idx, o1], xy[idx, o2]
        p1 = x0 + t1[:, None] * (x1 - x0)
        p2 = x0 + t2[:, None] * (x2 - x0)
        # orient so that {f > c} lies to the left of p1 -> p2
        flip = n_above[idx] == 2
        p1[flip], p2[flip] = p2[flip].copy(), p1[flip].copy()
        bary = np.zeros((len(idx), 3))
        bary[r, lone] = 1.0 - 0.5 * (t1 + t2)
        bary[r, o1] = 0.5 * t1
        bary[r, o2] = 0.5 * t2
        tri = self.tri[idx]
        k1 = np.sort(np.stack([tri[r, lone], tri[r, o1]], 1), axis=1)
        k2 = np.sort(np.stack([tri[r, lone], tri[r, o2]], 1), axis=1)
        k1[flip], k2[flip] = k2[flip].copy(), k1[flip].copy()
        # boundary-edge pieces inside {f > c}
        touches = False
        bq = (np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0, dtype=int))
        if len(self.bedge):
            fa, fb = self.f[self.bedge[:, 0]], self.f[self.bedge[:, 1]]
            touch_v = ((fa >= c) & (fa > 0)) | ((fb >= c) & (fb > 0))
            # closure of {f > c} meets a boundary vertex at level exactly c only via a cut triangle
            if np.any(touch_v):
                hit = np.zeros(self.grid.n_vertices, dtype=bool)
                hit[tri[above[idx]]] = True
                hit[self.tri[n_above == 3].ravel()] = True
                vv = self.bedge[touch_v].ravel()
                fvv = self.f[vv]
                touches = bool(np.any(((fvv > c) | (hit[vv] & (fvv >= c))) & (fvv > 0)))
            pa = fa > c
            pb = fb > c
            part = pa | pb
            if np.any(part):
                qa = self.bedge_xy[part, 0].copy()
                qb = self.bedge_xy[part, 1].copy()
                fa_, fb_ = fa[part], fb[part]
                only_a = pa[part] & ~pb[part]
                only_b = pb[part] & ~pa[part]
                ta = (fa_ - c) / np.where(only_a, fa_ - fb_, 1.0)
                qb[only_a] = qa[only_a] + ta[only_a, None] * (qb[only_a] - qa[only_a])
                tb = (fb_ - c) / np.where(only_b, fb_ - fa_, 1.0)
                qa[only_b] = qb[only_b] + tb[only_b, None] * (qa[only_b] - qb[only_b])
                bq = (qa, qb, self.bedge_cell[part])
        return LevelGeometry(volume, p1, p2, idx, bary, k1, k2, bq, touches)

    # -- dim 1 ---------------------------------------------------------------
    def level_1d(self, c):
        """Clip every selected segment against ``f > c``; returns volume, crossings and boundary hits."""
        fv, x = self.fv, self.x
        above = fv > c
        n_above = above.sum(axis=1)
        frac = (n_above == 2).astype(float)
        idx = np.flatnonzero(n_above == 1)
        a = np.argmax(above[idx], axis=1)
        b = 1 - a
        r = np.arange(len(idx))
        fa, fb = fv[idx, a], fv[idx, b]
        t = (fa - c) / (fa - fb)
        frac[idx] = t
        volume = float(np.dot(frac, self.rho_len))
        xa, xb = x[idx, a], x[idx, b]
        cross = xa + t * (xb - xa)
        seg = self.seg[idx]
        phi_w = np.stack([1.0 - t, t], 1)  # weights of (a, b) endpoints
        ends = np.stack([seg[r, a], seg[r, b]], 1)
        return volume, cross, ends, phi_w


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def _domain_field(u, domain, n_vertices):
    """``sigma * u`` with other same-sign vertices outside the domain set to zero."""
    u = np.asarray(u, dtype=float)
    if u.shape != (n_vertices,):
        raise ConfigError("u must have one value per grid vertex")
    f = domain.sign * u
    inside = np.zeros(n_vertices, dtype=bool)
    inside[domain.vertices] = True
    f = np.where(~inside & (f > 0), 0.0, f)
    g = f[domain.vertices]
    if g.max() - g.min() <= _CONST_RTOL * g.max():
        f = np.where(inside, g.mean(), f)
    return f


def _levels(values, n_levels):
    """Sample levels ``0 = s_0 < ... < s_n = max`` at quantiles of the vertex values.

    Repeated vertex values (e.g. functions of one coordinate) make quantiles
    coincide; the largest gaps are then bisected until ``n_levels`` levels
    are reached.
    """
    top = float(values.max())
    q = np.quantile(values, np.arange(1, n_levels - 1) / (n_levels - 1))
    q = q[(q > 0) & (q < top * (1 - 1e-12))]
    s = np.unique(np.concatenate([[0.0], q, [top]]))
    missing = n_levels - len(s)
    if missing > 0 and top > 0:
        gaps = np.diff(s)
        parts = np.ones(len(gaps), dtype=int)
        for _ in range(missing):
            parts[np.argmax(gaps / parts)] += 1
        fill = [s[i] + gaps[i] * np.arange(1, p) / p for i, p in enumerate(parts) if p > 1]
        if fill:
            s = np.unique(np.concatenate([s] + fill))
    return s


def _trapezoid_weights(s):
    w = np.zeros_like(s)
    ds = np.diff(s)
    w[:-1] += 0.5 * ds
    w[1:] += 0.5 * ds
    return w


def smeasure_bound(s, volume, perimeter, weights=None):
    """Lower bound on the measure of ``{s : ratio(s) <= hbar}``.

    Parameters
    ----------
    s, volume, perimeter : array_like
        Level profile, including the top level where volume vanishes.
    weights : array_like, optional
        Quadrature weights in ``s``; trapezoid by default.

    Returns
    -------
    SMeasureBound
        ``value = ||hbar - h||_{L1(P)} ||u||^2 / (2 (hbar - inf h) mu(G))``.
    """
    s = np.asarray(s, dtype=float)
    vol = np.asarray(volume, dtype=float)
    per = np.asarray(perimeter, dtype=float)
    w = _trapezoid_weights(s) if weights is None else np.asarray(weights, dtype=float)
    l2 = float(np.dot(w, vol))
    hbar = float(np.dot(w, per)) / l2
    pos = vol > 0
    inf_h = float(np.min(per[pos] / vol[pos]))
    mu_g = float(vol[0])
    dev = float(np.dot(w, np.abs(hbar * vol - per)))
    denom = 2.0 * (hbar - inf_h) * mu_g
    if not denom > 1e-12 * max(hbar, 1.0) * mu_g:
        return SMeasureBound(0.0, True, hbar, inf_h)
    return SMeasureBound(dev / denom, False, hbar, inf_h)


def _static_lengths(grid, metric, weight):
    phi = weight.phi

    def lengths(geom, lev):
        if len(lev.tri) == 0:
            seg = 0.0
        else:
            cell = geom.tri_cell[lev.tri]
            ph = np.einsum("ij,ij->i", lev.bary, phi[geom.tri[lev.tri]])
            seg = _metric_length(lev.p2 - lev.p1, metric.g11[cell], metric.g12[cell],
                                 metric.g22[cell], ph)
        return seg

    def boundary(geom, q1, q2, cell):
        if len(q1) == 0:
            return 0.0
        # phi linearly interpolated along the boundary edge at the midpoint
        mid = 0.5 * (q1 + q2)
        ph = _interp_phi_at(grid, phi, mid)
        return float(np.sum(_metric_length(q2 - q1, metric.g11[cell], metric.g12[cell],
                                           metric.g22[cell], ph)))

    return lengths, boundary


def _interp_phi_at(grid, phi, pts):
    """Bilinear interpolation of vertex ``phi`` at points (used on grid edges only)."""
    h = np.asarray(grid.spacing)
    g = pts / h
    i0 = np.floor(g).astype(int)
    fr = g - i0
    out = np.zeros(len(pts))
    for dx in (0, 1):
        for dy in (0, 1):
            wgt = (fr[:, 0] if dx else 1 - fr[:, 0]) * (fr[:, 1] if dy else 1 - fr[:, 1])
            ii = np.clip(i0[:, 0] + dx, None, None)
            jj = i0[:, 1] + dy
            if not grid.periodic[0]:
                ii = np.clip(ii, 0, grid.resolution[0] - 1)
            if not grid.periodic[1]:
                jj = np.clip(jj, 0, grid.resolution[1] - 1)
            out += wgt * phi[grid.vertex_index(ii, jj)]
    return out


def _segment_on_boundary(grid, p1, p2):
    if len(p1) == 0 or grid.boundary_vertices.size == 0:
        return np.zeros(len(p1), dtype=bool)
    s1 = grid.points_on_boundary(p1, atol=1e-9)
    s2 = grid.points_on_boundary(p2, atol=1e-9)
    return np.any((s1 == s2) & (s1 != 0), axis=1)


def _run_sweep(grid, density, u, domain, lam, mode, n_levels, seg_length, bnd_length, phi):
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    if lam > 0:
        raise ConfigError(f"lambda must be <= 0, got {lam}")
    if n_levels < 16:
        raise ConfigError("n_levels must be at least 16")
    if domain.size < 4:
        raise EmptyAdmissibleSetError(
            f"nodal domain has {domain.size} vertices; at least 4 are needed to resolve level sets"
        )
    f = _domain_field(u, domain, grid.n_vertices)
    vals = f[domain.vertices] ** 2
    s = _levels(vals, n_levels)
    geom = DomainGeometry(grid, density, f, domain.vertices)
    vol = np.zeros(len(s))
    per = np.zeros(len(s))
    touch = np.zeros(len(s), dtype=bool)
    levels = []
    for j, sj in enumerate(s[:-1]):
        c = np.sqrt(sj)
        if grid.dim == 2:
            lev = geom.level_2d(c)
            vol[j] = lev.volume
            seg = np.asarray(seg_length(geom, lev), dtype=float)
            if mode == "neumann" and np.ndim(seg) and len(seg):
                seg = np.where(_segment_on_boundary(grid, lev.p1, lev.p2), 0.0, seg)
            per[j] = float(np.sum(seg))
            touch[j] = lev.touches_boundary
            if mode == "dirichlet":
                per[j] += bnd_length(geom, *lev.boundary_length_pts)
            levels.append(lev)
        else:
            v, cross, ends, wts = geom.level_1d(c)
            vol[j] = v
            ph = np.einsum("ij,ij->i", wts, phi[ends]) if len(ends) else np.zeros(0)
            on_b = np.zeros(len(cross), dtype=bool)
            if len(cross):
                on_b = grid.points_on_boundary(cross[:, None], atol=1e-9)[:, 0] != 0
            p = float(np.sum(np.exp(ph)[~on_b] if mode == "neumann" else np.exp(ph)))
            bv = grid.boundary_vertices
            fb = f[bv]
            hit_b = (fb > c) | ((fb >= c) & (fb > 0))
            touch[j] = bool(np.any(hit_b))
            if mode == "dirichlet":
                p += float(np.sum(np.exp(phi[bv][fb > c])))
            per[j] = p
            levels.append((cross, ends))
    ratio = np.full(len(s), np.inf)
    pos = vol > 0
    ratio[pos] = per[pos] / vol[pos]
    bound = 2.0 * np.sqrt(-lam)
    adm = np.isfinite(ratio) & (ratio <= bound)
    if mode == "dirichlet":
        adm &= ~touch
    w = _trapezoid_weights(s)
    sm = smeasure_bound(s, vol, per, w)
    l2 = float(np.dot(w, vol))
    est = float(np.dot(w, adm))
    s_upper = float("nan")
    if np.any(adm):
        j = int(np.flatnonzero(adm)[-1])
        s_upper = float(s[j])
        if j + 1 < len(s) and not touch[j + 1] and np.isfinite(ratio[j + 1]) and ratio[j + 1] > ratio[j]:
            t = (bound - ratio[j]) / (ratio[j + 1] - ratio[j])
            s_upper = float(s[j] + min(max(t, 0.0), 1.0) * (s[j + 1] - s[j]))
        elif j + 1 < len(s) and not np.isfinite(ratio[j + 1]):
            s_upper = float(s[j])
    records = tuple(
        SweepRecord(float(s[j]), float(vol[j]), float(per[j]), float(ratio[j]), bool(adm[j]))
        for j in range(len(s))
    )
    w.setflags(write=False)
    touch.setflags(write=False)
    result = SweepResult(
        records, float(lam), mode, w, float(vol[0]), l2, sm.hbar, est, sm.value,
        sm.degenerate, max(0.0, sm.value - est), s_upper, touch,
    )
    return result, geom, levels


def superlevel_sweep(grid, metric, weight, u, domain, lam, mode="neumann", n_levels=256):
    """Sweep the superlevel sets of ``u**2`` inside one nodal domain.

    Parameters
    ----------
    grid, metric, weight
        The weighted domain.
    u : ndarray
        Vertex values of the eigenfunction.
    domain : NodalDomain
        One domain of ``nodal_domains(grid, u)``.
    lam : float
        Eigenvalue (``<= 0``) defining admissibility.
    mode : {'neumann', 'dirichlet'}
    n_levels : int
        Number of sampled levels (>= 16), including ``0`` and ``max u**2``.

    Returns
    -------
    SweepResult
    """
    density = weight.cell_density(grid) * metric.sqrt_det()
    seg, bnd = _static_lengths(grid, metric, weight) if grid.dim == 2 else (None, None)
    result, _, _ = _run_sweep(grid, density, u, domain, lam, mode, n_levels, seg, bnd, weight.phi)
    return result


# ---------------------------------------------------------------------------
# contour extraction helpers
# ---------------------------------------------------------------------------


def contour_segments(grid, values, level):
    """Segments of ``{values = level}`` on the triangulated grid (dim 2).

    Returns ``(p1, p2)`` arrays of unwrapped endpoint coordinates, oriented
    so that ``{values > level}`` lies to the left.
    """
    values = np.asarray(values, dtype=float)
    geom = DomainGeometry(grid, np.ones(grid.n_cells), values, np.arange(grid.n_vertices))
    lev = geom.level_2d(level)
    return lev.p1, lev.p2


def chain_segments(grid, lev):
    """Join the segments of one level into polylines.

    Segments are linked through the mesh edges carrying their endpoints;
    coordinates are made continuous across periodic seams.

    Returns
    -------
    list of ndarray
        Each polyline as an ``(m, 2)`` array; closed curves repeat their
        first point at the end.
    """
    n = len(lev.p1)
    if n == 0:
        return []
    N = grid.n_vertices
    k1 = lev.key1[:, 0] * N + lev.key1[:, 1]
    k2 = lev.key2[:, 0] * N + lev.key2[:, 1]
    start_of = {}
    for i, k in enumerate(k1):
        start_of.setdefault(int(k), i)
    has_pred = np.isin(k1, k2)
    used = np.zeros(n, dtype=bool)
    ext = np.asarray(grid.extent)
    per = np.asarray(grid.periodic)

    def near(prev, p):
        d = p - prev
        d = np.where(per, d - ext * np.round(d / ext), d)
        return prev + d

    lines = []
    order = list(np.flatnonzero(~has_pred)) + list(range(n))
    for i0 in order:
        if used[i0]:
            continue
        pts = [lev.p1[i0].copy(), lev.p2[i0].copy()]
        used[i0] = True
        key = int(k2[i0])
        closed = False
        while True:
            j = start_of.get(key)
            if j is None:
                break
            if used[j]:
                closed = j == i0
                break
            used[j] = True
            pts.append(near(pts[-1], lev.p2[j]))
            key = int(k2[j])
        if closed:
            pts[-1] = near(pts[-2], pts[0]) if len(pts) > 2 else pts[-1]
        lines.append(np.array(pts))
    return lines


def coarea_integral(grid, metric, weight, u, domain):
    """``int_G |grad(u**2)| dmu`` for the P1 interpolant of ``u`` (dim 2) or its 1-D analogue."""
    f = _domain_field(u, domain, grid.n_vertices)
    density = weight.cell_density(grid) * metric.sqrt_det()
    geom = DomainGeometry(grid, density, f, domain.vertices)
    if grid.dim == 1:
        # f**2 is monotone on each linear piece where f > 0
        fa, fb = geom.fv[:, 0], geom.fv[:, 1]
        val = np.where((fa > 0) & (fb > 0), np.abs(fa ** 2 - fb ** 2), 0.0)
        val = np.where((fa > 0) ^ (fb > 0), np.maximum(fa, fb) ** 2, val)
        dens = np.exp(weight.phi)[geom.seg].mean(axis=1)
        return float(np.dot(val, dens))
    from .assembly import _local_gradients

    G = _local_gradients(grid.spacing)  # (2, 3, 2)
    grads = np.einsum("tai,ta->ti", G[geom.tri_shape], geom.fv)
    i11, i12, i22 = (np.asarray(a)[geom.tri_cell] for a in metric.inverse_components())
    gnorm = np.sqrt(i11 * grads[:, 0] ** 2 + 2 * i12 * grads[:, 0] * grads[:, 1] + i22 * grads[:, 1] ** 2)
    fv = geom.fv
    npos = (fv > 0).sum(axis=1)
    area = 0.5 * grid.cell_area
    integ = np.zeros(len(fv))
    full = npos == 3
    integ[full] = area * fv[full].mean(axis=1)
    one = npos == 1
    if np.any(one):
        a = np.argmax(fv[one] > 0, axis=1)
        r = np.arange(one.sum())
        fa = fv[one][r, a]
        fo1 = fv[one][r, (a + 1) % 3]
        fo2 = fv[one][r, (a + 2) % 3]
        t1, t2 = fa / (fa - fo1), fa / (fa - fo2)
        integ[one] = area * t1 * t2 * fa / 3.0
    two = npos == 2
    if np.any(two):
        a = np.argmin(fv[two] > 0, axis=1)
        r = np.arange(two.sum())
        fa = fv[two][r, a]
        fo1 = fv[two][r, (a + 1) % 3]
        fo2 = fv[two][r, (a + 2) % 3]
        t1, t2 = fa / (fa - fo1), fa / (fa - fo2)
        integ[two] = area * fv[two].mean(axis=1) + area * t1 * t2 * (-fa) / 3.0
    dens = np.exp(weight.phi)[geom.tri].mean(axis=1) * metric.sqrt_det()[geom.tri_cell]
    return float(np.sum(2.0 * gnorm * integ * dens))


# ---------------------------------------------------------------------------
# packings
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PackedSet:
    """One member of a packing: a superlevel region of a nodal domain."""

    domain_index: int
    sign: int
    s: float
    volume: float
    perimeter: float
    ratio: float
    vertices: np.ndarray = field(repr=False)
    polylines: list = field(repr=False)


@dataclass(frozen=True, eq=False)
class Packing:
    """Disjoint admissible regions with the certificate ``lambda_k <= -max_ratio**2 / 4``."""

    sets: tuple
    k: int
    r_k: int
    lambda_k: float
    witness_eigenvalue: float
    max_ratio: float
    certificate: dict
    sweeps: tuple = field(repr=False)

    @property
    def ratios(self):
        return [p.ratio for p in self.sets]


def _select(sweep, selection):
    adm = np.flatnonzero(sweep.admissible)
    if selection == "min_ratio":
        r = sweep.ratio[adm]
        return int(adm[np.argmin(r)])
    if selection == "midpoint":
        s = sweep.s[adm]
        mid = 0.5 * (s.min() + s.max())
        return int(adm[np.argmin(np.abs(s - mid))])
    raise ConfigError(f"selection must be 'min_ratio' or 'midpoint', got {selection!r}")


def pack_from_items(grid, items, selection, lambda_k, k=None, witness_eigenvalue=None, scale=1.0):
    """Select one admissible level per swept domain and certify the packing.

    Parameters
    ----------
    items : sequence of (u, domain, sweep, levels)
        Function, its nodal domain, the sweep of that domain and the
        per-level geometry returned alongside the sweep.
    selection : {'min_ratio', 'midpoint'}
    lambda_k : float
    scale : float
        Factor applied to ``max_ratio**2 / 4`` in the certificate (the SEBA
        variant uses the smallest retention).
    """
    sets = []
    for i, (u, dom, sw, lev) in enumerate(items):
        if not sw.nonempty:
            raise EmptyAdmissibleSetError(
                f"no admissible level in domain {i} at this resolution (min ratio {sw.min_ratio():.4g}, "
                f"bound {sw.ratio_bound:.4g})",
                min_ratio=sw.min_ratio(),
            )
        j = _select(sw, selection)
        rec = sw.records[j]
        f = _domain_field(u, dom, grid.n_vertices)
        verts = dom.vertices[f[dom.vertices] ** 2 > rec.s]
        if grid.dim == 2:
            polys = chain_segments(grid, lev[j])
        else:
            polys = [np.sort(lev[j][0])[:, None]]
        sets.append(PackedSet(i, dom.sign, rec.s, rec.volume, rec.perimeter, rec.ratio, verts, polys))
    seen = np.zeros(grid.n_vertices, dtype=int)
    for p in sets:
        seen[p.vertices] += 1
    if np.any(seen > 1):
        raise CertificateError("packing regions overlap")
    max_ratio = max(p.ratio for p in sets)
    bound = -0.25 * max_ratio ** 2 * scale
    holds = bool(lambda_k <= bound + 1e-12 * max(1.0, abs(bound)))
    cert = {
        "lambda_k": float(lambda_k),
        "max_ratio": float(max_ratio),
        "scale": float(scale),
        "bound": float(bound),
        "holds": holds,
    }
    if not holds:
        raise CertificateError(
            f"certificate violated: lambda_k = {lambda_k:.6g} > {bound:.6g} = -max_ratio^2/4 * {scale:.4g}"
        )
    return Packing(tuple(sets), k, len(sets), float(lambda_k),
                   float(lambda_k if witness_eigenvalue is None else witness_eigenvalue),
                   float(max_ratio), cert, tuple(it[2] for it in items))


def build_packing(grid, metric, weight, basis, k, mode="neumann", selection="min_ratio",
                  n_levels=256, symmetry=True, trial_vectors=None, zero_tol=None):
    """Certified ``r_k``-packing from the nodal domains of a witness eigenfunction.

    The witness is chosen by :func:`r_k_from_basis`; every nodal domain is
    swept with the witness eigenvalue, one admissible level is selected per
    domain and the inequality ``lambda_k <= -max_ratio**2 / 4`` is checked.

    Raises
    ------
    EmptyAdmissibleSetError
        A domain has no admissible level at the sweep resolution.
    CertificateError
        The assembled packing violates the inequality.
    """
    rk = r_k_from_basis(grid, basis, k, zero_tol=zero_tol, trial_vectors=trial_vectors,
                        symmetry=symmetry)
    u = rk.vector
    lam_w = min(rk.eigenvalue, 0.0)
    lam_k = float(basis.eigenvalues[k - 1])
    dec = nodal_domains(grid, u, zero_tol)
    density = weight.cell_density(grid) * metric.sqrt_det()
    seg, bnd = _static_lengths(grid, metric, weight) if grid.dim == 2 else (None, None)
    items = []
    for dom in dec.domains:
        sw, _, lev = _run_sweep(grid, density, u, dom, lam_w, mode, n_levels, seg, bnd, weight.phi)
        items.append((u, dom, sw, lev))
    return pack_from_items(grid, items, selection, lam_k, k=k, witness_eigenvalue=lam_w)
