"""Time-indexed flows, the geometry-of-mixing metric and dynamic Cheeger ratios.

A flow is a finite family of maps ``Phi_t``, ``t = 0, ..., t_max``, of a
2-D grid domain, given analytically together with their Jacobians and the
time-``t`` metric and log-density.  The dynamic Laplacian is the weighted
Laplacian of the initial measure ``mu_0`` and the metric ``gbar`` with

    gbar^{-1} = mean_t (Phi_t^* g_t)^{-1}.

Dynamic perimeters advect boundary polylines by every ``Phi_t`` and
average their weighted lengths over time.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .assembly import assemble_coefficients
from .errors import ConfigError, NumericalError
from .levelset import (
    SweepRecord,
    _metric_length,
    _run_sweep,
    _segment_on_boundary,
    pack_from_items,
)
from .manifold import MetricField
from .nodal import nodal_domains, r_k_from_basis

__all__ = [
    "FlowMap",
    "shear_flow",
    "identity_flow",
    "mixing_inverse",
    "mixing_metric",
    "mu0_density",
    "assemble_dynamic",
    "Region",
    "band_region",
    "strip_region",
    "advected_lengths",
    "dynamic_cheeger_ratio",
    "mixing_cheeger_ratio",
    "check_mixing_bound",
    "DynamicSweepRecord",
    "dynamic_sweep",
    "build_dynamic_packing",
    "polygon_area",
    "advected_area",
]

MAX_DOUBLINGS = 12
TOL_REL_CELL = 1e-3


def _euclidean(t, pts):
    n = len(pts)
    return np.ones(n), np.zeros(n), np.ones(n)


def _zero_phi(t, pts):
    return np.zeros(len(pts))


@dataclass(frozen=True, eq=False)
class FlowMap:
    """Analytic maps ``Phi_t`` for ``t`` in ``T = {0, ..., t_max}``.

    Parameters
    ----------
    t_max : int
    map_fn : callable
        ``map_fn(t, pts) -> pts`` on ``(N, 2)`` arrays, unwrapped; it must
        commute with periodic translations.
    jac_fn : callable
        ``jac_fn(t, pts) -> (N, 2, 2)`` Jacobians ``D Phi_t``.
    extent, periodic : tuple
        Domain shared by every ``M_t``.
    metric_fn : callable, optional
        ``metric_fn(t, pts) -> (g11, g12, g22)`` on ``M_t``; Euclidean by default.
    phi_fn : callable, optional
        ``phi_fn(t, pts)`` log-density on ``M_t``; zero by default.
    measure_preserving : bool
        Declared property, checked at sample points when the density is uniform.
    name : str
    params : dict
    """

    t_max: int
    map_fn: object = field(repr=False)
    jac_fn: object = field(repr=False)
    extent: tuple = (2 * np.pi, np.pi)
    periodic: tuple = (True, False)
    metric_fn: object = field(default=None, repr=False)
    phi_fn: object = field(default=None, repr=False)
    measure_preserving: bool = True
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.t_max, bool) or int(self.t_max) != self.t_max or self.t_max < 0:
            raise ConfigError(f"t_max must be a non-negative integer, got {self.t_max}")
        object.__setattr__(self, "t_max", int(self.t_max))
        object.__setattr__(self, "extent", tuple(float(v) for v in self.extent))
        object.__setattr__(self, "periodic", tuple(bool(p) for p in self.periodic))
        if self.metric_fn is None:
            object.__setattr__(self, "metric_fn", _euclidean)
        if self.phi_fn is None:
            object.__setattr__(self, "phi_fn", _zero_phi)

    @property
    def times(self):
        return range(self.t_max + 1)

    @property
    def n_times(self):
        return self.t_max + 1

    def wrap(self, pts):
        pts = np.array(pts, dtype=float, copy=True)
        for a in range(2):
            if self.periodic[a]:
                pts[..., a] = np.mod(pts[..., a], self.extent[a])
        return pts

    def map(self, t, pts, wrap=True):
        out = np.asarray(self.map_fn(t, np.atleast_2d(np.asarray(pts, dtype=float))), dtype=float)
        return self.wrap(out) if wrap else out

    def jacobian(self, t, pts):
        return np.asarray(self.jac_fn(t, np.atleast_2d(np.asarray(pts, dtype=float))), dtype=float)

    def metric(self, t, pts):
        return tuple(np.broadcast_to(np.asarray(g, dtype=float), (len(pts),))
                     for g in self.metric_fn(t, pts))

    def phi(self, t, pts):
        return np.broadcast_to(np.asarray(self.phi_fn(t, pts), dtype=float), (len(pts),))

    def validate(self, n_samples=64, seed=0, atol=1e-8):
        """Check ``Phi_0 = id`` and, when declared, ``|det D Phi_t| = 1`` at random points.

        Raises
        ------
        ConfigError
            On the first violated property.
        """
        rng = np.random.default_rng(seed)
        pts = rng.uniform(0.0, 1.0, (n_samples, 2)) * np.asarray(self.extent)
        if not np.allclose(self.map(0, pts, wrap=False), pts, rtol=0, atol=atol):
            raise ConfigError(f"flow {self.name!r}: Phi_0 is not the identity")
        if self.measure_preserving:
            uniform = all(np.allclose(self.phi(t, pts), 0.0) for t in self.times)
            euclid = all(
                np.allclose(np.stack(self.metric(t, pts)), np.stack(_euclidean(t, pts)))
                for t in self.times
            )
            if uniform and euclid:
                for t in self.times:
                    det = np.linalg.det(self.jacobian(t, pts))
                    if not np.allclose(np.abs(det), 1.0, rtol=0, atol=atol):
                        raise ConfigError(f"flow {self.name!r}: |det D Phi_{t}| != 1")
        return True


def shear_flow(b, t_max, extent=(2 * np.pi, np.pi)):
    """Linear shear ``Phi_t(x, y) = (x + b (t / t_max) y mod L_x, y)`` on the cylinder."""
    b = float(b)
    if t_max < 1:
        raise ConfigError("shear flow needs t_max >= 1")

    def c(t):
        return b * t / t_max

    def map_fn(t, pts):
        return np.column_stack([pts[:, 0] + c(t) * pts[:, 1], pts[:, 1]])

    def jac_fn(t, pts):
        J = np.zeros((len(pts), 2, 2))
        J[:, 0, 0] = 1.0
        J[:, 1, 1] = 1.0
        J[:, 0, 1] = c(t)
        return J

    fm = FlowMap(t_max, map_fn, jac_fn, tuple(extent), (True, False),
                 name="shear", params={"b": b, "t_max": int(t_max)})
    fm.validate()
    return fm


def identity_flow(t_max, extent=(2 * np.pi, np.pi), periodic=(True, False), metric_fn=None,
                  phi_fn=None):
    """Every ``Phi_t`` is the identity; ``metric_fn``/``phi_fn`` default to the static Euclidean/uniform data."""

    def map_fn(t, pts):
        return pts.copy()

    def jac_fn(t, pts):
        return np.broadcast_to(np.eye(2), (len(pts), 2, 2)).copy()

    return FlowMap(t_max, map_fn, jac_fn, tuple(extent), tuple(periodic), metric_fn, phi_fn,
                   name="identity", params={"t_max": int(t_max)})


def _check_grid(grid, flowmap):
    if grid.dim != 2:
        raise ConfigError("dynamic operations need a 2-D grid")
    if not (np.allclose(grid.extent, flowmap.extent) and tuple(grid.periodic) == flowmap.periodic):
        raise ConfigError("grid and flow map disagree on extent or periodicity")


def _time_mean(values):
    """``v_0 + mean(v_t - v_0)``: exact when all ``v_t`` coincide."""
    v0 = values[0]
    return v0 + np.mean([v - v0 for v in values], axis=0)


def mixing_inverse(flowmap, pts):
    """Entries ``(a11, a12, a22)`` of ``gbar^{-1}`` at points of ``M_0``.

    Raises
    ------
    NumericalError
        A Jacobian is singular at some point.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    invs = []
    for t in flowmap.times:
        J = flowmap.jacobian(t, pts)
        det = np.linalg.det(J)
        if not np.all(np.isfinite(det)) or np.any(np.abs(det) < 1e-14):
            raise NumericalError(f"Jacobian of Phi_{t} is singular at some sample point")
        g11, g12, g22 = flowmap.metric(t, flowmap.map(t, pts))
        G = np.stack([np.stack([g11, g12], -1), np.stack([g12, g22], -1)], -2)
        pull = np.einsum("nki,nkl,nlj->nij", J, G, J)
        invs.append(np.linalg.inv(pull))
    A = _time_mean(invs)
    a12 = 0.5 * (A[:, 0, 1] + A[:, 1, 0])
    det = A[:, 0, 0] * A[:, 1, 1] - a12 ** 2
    # a mean of SPD matrices is SPD
    assert np.all(det > 0) and np.all(A[:, 0, 0] > 0), "mixing metric lost positive definiteness"
    return A[:, 0, 0], a12, A[:, 1, 1]


def mixing_metric(flowmap, grid):
    """The geometry-of-mixing metric ``gbar`` per cell (evaluated at cell centres)."""
    _check_grid(grid, flowmap)
    a11, a12, a22 = mixing_inverse(flowmap, grid.cell_centers)
    d = a11 * a22 - a12 ** 2
    return MetricField(a22 / d, -a12 / d, a11 / d)


def mu0_density(grid, flowmap):
    """Per-cell density of ``mu_0``: corner-averaged ``exp(phi_0)`` times ``sqrt(det g_0)``."""
    _check_grid(grid, flowmap)
    e = np.exp(flowmap.phi(0, grid.vertex_coords))[grid.cells].mean(axis=1)
    g11, g12, g22 = flowmap.metric(0, grid.cell_centers)
    return e * np.sqrt(g11 * g22 - g12 ** 2)


def assemble_dynamic(grid, flowmap, bc="neumann", lumped=False):
    """Assemble the dynamic Laplacian as the weighted Laplacian of ``(gbar, mu_0)``.

    The dynamic Neumann condition is the natural condition of this form.

    Returns
    -------
    DiscreteOperator
    """
    _check_grid(grid, flowmap)
    inv = mixing_inverse(flowmap, grid.cell_centers)
    return assemble_coefficients(grid, mu0_density(grid, flowmap), inv, bc, lumped)


# ---------------------------------------------------------------------------
# advected lengths
# ---------------------------------------------------------------------------


def _default_tol(flowmap, grid=None, cell_size=None):
    if cell_size is None:
        cell_size = min(grid.spacing) if grid is not None else min(flowmap.extent) / 100.0
    return TOL_REL_CELL * cell_size


def _image_length(flowmap, t, qa, qb):
    mid = 0.5 * (qa + qb)
    g11, g12, g22 = flowmap.metric(t, mid)
    return _metric_length(qb - qa, g11, g12, g22, flowmap.phi(t, mid))


def _advected_length_t(flowmap, t, p1, p2, tol, max_doublings):
    """Weighted length of ``Phi_t([p1, p2])`` per segment, refined adaptively."""
    n = len(p1)
    out = np.zeros(n)
    owner = np.arange(n)
    a, b = p1, p2
    fa, fb = flowmap.map(t, a, wrap=False), flowmap.map(t, b, wrap=False)
    for _ in range(max_doublings + 1):
        m = 0.5 * (a + b)
        fm = flowmap.map(t, m, wrap=False)
        ok = np.linalg.norm(fm - 0.5 * (fa + fb), axis=1) <= tol
        if np.any(ok):
            np.add.at(out, owner[ok], _image_length(flowmap, t, fa[ok], fb[ok]))
        if np.all(ok):
            return out
        bad = ~ok
        a, b, fa, fb, fm, owner = a[bad], b[bad], fa[bad], fb[bad], fm[bad], owner[bad]
        a, b = np.concatenate([a, m[bad]]), np.concatenate([m[bad], b])
        fa, fb = np.concatenate([fa, fm]), np.concatenate([fm, fb])
        owner = np.concatenate([owner, owner])
    raise NumericalError(
        f"advected polyline did not resolve within {max_doublings} doublings at t={t}"
    )


def advected_lengths(flowmap, p1, p2, tol, max_doublings=MAX_DOUBLINGS):
    """Per-time weighted lengths of advected segments, shape ``(|T|, n_segments)``."""
    p1 = np.atleast_2d(np.asarray(p1, dtype=float))
    p2 = np.atleast_2d(np.asarray(p2, dtype=float))
    if len(p1) == 0:
        return np.zeros((flowmap.n_times, 0))
    return np.stack([_advected_length_t(flowmap, t, p1, p2, tol, max_doublings)
                     for t in flowmap.times])


@dataclass(frozen=True, eq=False)
class Region:
    """A region of ``M_0`` given by its boundary polylines and its ``mu_0`` measure.

    Each polyline is an ``(m, 2)`` array in unwrapped coordinates; closed
    curves repeat (a periodic translate of) their first point at the end.
    """

    polylines: tuple = field(repr=False)
    measure: float

    def __post_init__(self):
        lines = tuple(np.atleast_2d(np.asarray(p, dtype=float)) for p in self.polylines)
        if not lines or any(p.shape[1] != 2 or len(p) < 2 for p in lines):
            raise ConfigError("a region needs at least one polyline of two or more 2-D points")
        if not self.measure > 0:
            raise ConfigError("region measure must be positive")
        object.__setattr__(self, "polylines", lines)

    def segments(self):
        p1 = np.concatenate([p[:-1] for p in self.polylines])
        p2 = np.concatenate([p[1:] for p in self.polylines])
        return p1, p2


def band_region(y1, y2, extent=(2 * np.pi, np.pi)):
    """The band ``S^1 x (y1, y2)`` with Lebesgue measure."""
    if not 0 <= y1 < y2 <= extent[1]:
        raise ConfigError("band needs 0 <= y1 < y2 <= L_y")
    L = extent[0]
    lines = [np.array([[0.0, y], [L, y]]) for y in (y1, y2)]
    return Region(lines, L * (y2 - y1))


def strip_region(x1, x2, extent=(2 * np.pi, np.pi)):
    """The strip ``(x1, x2) x [0, L_y]`` with Lebesgue measure; its boundary includes pieces of ``y = 0, L_y``."""
    if not x1 < x2 or x2 - x1 >= extent[0]:
        raise ConfigError("strip needs x1 < x2 < x1 + L_x")
    H = extent[1]
    outline = np.array([[x1, 0.0], [x2, 0.0], [x2, H], [x1, H], [x1, 0.0]])
    return Region([outline], (x2 - x1) * H)


def _flow_on_boundary(flowmap, p1, p2):
    """Segments lying on a non-periodic side of ``M_0``."""
    on = np.zeros(len(p1), dtype=bool)
    for a in range(2):
        if flowmap.periodic[a]:
            continue
        tol = 1e-9 * max(1.0, flowmap.extent[a])
        for v in (0.0, flowmap.extent[a]):
            on |= (np.abs(p1[:, a] - v) <= tol) & (np.abs(p2[:, a] - v) <= tol)
    return on


def _region_segments(flowmap, region, mode):
    if mode not in ("neumann", "dirichlet"):
        raise ConfigError(f"mode must be 'neumann' or 'dirichlet', got {mode!r}")
    p1, p2 = region.segments()
    if mode == "neumann":
        keep = ~_flow_on_boundary(flowmap, p1, p2)
        p1, p2 = p1[keep], p2[keep]
    return p1, p2


def dynamic_cheeger_ratio(flowmap, region, mode="neumann", tol=None, cell_size=None,
                          max_doublings=MAX_DOUBLINGS, return_lengths=False):
    """Time-averaged weighted length of the advected boundary over ``mu_0(region)``.

    Parameters
    ----------
    flowmap : FlowMap
    region : Region
    mode : {'neumann', 'dirichlet'}
        Neumann drops boundary pieces lying on the sides of ``M_0``.
    tol : float, optional
        Midpoint deviation tolerance; ``1e-3`` times ``cell_size``.
    return_lengths : bool
        Also return the per-time total lengths.

    Raises
    ------
    NumericalError
        Refinement budget exhausted.
    """
    tol = _default_tol(flowmap, cell_size=cell_size) if tol is None else tol
    p1, p2 = _region_segments(flowmap, region, mode)
    L = advected_lengths(flowmap, p1, p2, tol, max_doublings).sum(axis=1)
    ratio = float(_time_mean(list(L)) / region.measure)
    return (ratio, L) if return_lengths else ratio


def mixing_cheeger_ratio(flowmap, region, mode="neumann", cell_size=None):
    """Cheeger ratio of ``region`` for ``(gbar, mu_0)``, by ``gbar`` arc length.

    The boundary density of ``mu_0`` relative to ``gbar`` is
    ``exp(phi_0) sqrt(det g_0) / sqrt(det gbar)``; segments are subdivided
    to ``cell_size`` and integrated by the midpoint rule.
    """
    p1, p2 = _region_segments(flowmap, region, mode)
    if len(p1) == 0:
        return 0.0
    h = min(flowmap.extent) / 100.0 if cell_size is None else cell_size
    seglen = np.linalg.norm(p2 - p1, axis=1)
    n = np.maximum(1, np.ceil(seglen / h).astype(int))
    owner = np.repeat(np.arange(len(p1)), n)
    frac = np.concatenate([(np.arange(k) + 0.5) / k for k in n])
    d = (p2 - p1)[owner] / n[owner, None]
    mid = p1[owner] + frac[:, None] * (p2 - p1)[owner]
    a11, a12, a22 = mixing_inverse(flowmap, mid)
    det_inv = a11 * a22 - a12 ** 2
    gb11, gb12, gb22 = a22 / det_inv, -a12 / det_inv, a11 / det_inv
    g11, g12, g22 = flowmap.metric(0, mid)
    rho0 = np.exp(flowmap.phi(0, mid)) * np.sqrt(g11 * g22 - g12 ** 2)
    # exp(phi_bar) = rho0 / sqrt(det gbar) = rho0 * sqrt(det gbar^{-1})
    lengths = _metric_length(d, gb11, gb12, gb22, np.log(rho0 * np.sqrt(det_inv)))
    return float(np.sum(lengths) / region.measure)


def check_mixing_bound(flowmap, region, mode="neumann", tol=1e-3, cell_size=None):
    """Compare the dynamic ratio with the mixing-metric ratio of one region.

    Returns
    -------
    (J_dynamic, J_mixing, holds) : (float, float, bool)
        ``holds`` is ``J_dynamic <= J_mixing + tol``.
    """
    jd = dynamic_cheeger_ratio(flowmap, region, mode, cell_size=cell_size)
    jm = mixing_cheeger_ratio(flowmap, region, mode, cell_size=cell_size)
    return jd, jm, bool(jd <= jm + tol)


# ---------------------------------------------------------------------------
# sweeps and packings
# ---------------------------------------------------------------------------


def _dynamic_lengths(grid, flowmap, mode="neumann", tol=None, per_t=None):
    """Length callbacks for :func:`levelset._run_sweep` using advected perimeters.

    ``per_t``, when given, is a list that receives one row of per-time
    perimeters per level (Neumann exclusion applied).
    """
    _check_grid(grid, flowmap)
    tol = _default_tol(flowmap, grid) if tol is None else tol

    def lengths(geom, lev):
        if len(lev.tri) == 0:
            L = np.zeros((flowmap.n_times, 0))
        else:
            L = advected_lengths(flowmap, lev.p1, lev.p2, tol)
        if per_t is not None:
            mask = np.ones(L.shape[1], dtype=bool)
            if mode == "neumann" and L.shape[1]:
                mask = ~_segment_on_boundary(grid, lev.p1, lev.p2)
            per_t.append(L[:, mask].sum(axis=1))
        return _time_mean(list(L)) if L.shape[1] else 0.0

    def boundary(geom, q1, q2, cell):
        if len(q1) == 0:
            return 0.0
        L = advected_lengths(flowmap, q1, q2, tol)
        if per_t is not None and per_t:
            per_t[-1] = per_t[-1] + L.sum(axis=1)
        return float(np.sum(_time_mean(list(L))))

    return lengths, boundary


@dataclass(frozen=True)
class DynamicSweepRecord(SweepRecord):
    """A sweep record whose perimeter is the time average of ``perimeter_t``."""

    perimeter_t: tuple = ()


def dynamic_sweep(grid, flowmap, u, domain, lam, mode="neumann", n_levels=256, tol=None,
                  return_levels=False):
    """Superlevel sweep of ``u**2`` in a nodal domain with dynamic perimeters.

    Volumes are ``mu_0`` volumes; the ratio at each level is the
    time-averaged advected perimeter over the volume.  Arguments and errors
    are as for :func:`levelset.superlevel_sweep`.

    Returns
    -------
    SweepResult
        With :class:`DynamicSweepRecord` records.
    """
    _check_grid(grid, flowmap)
    per_t = []
    seg, bnd = _dynamic_lengths(grid, flowmap, mode, tol, per_t)
    density = mu0_density(grid, flowmap)
    phi0 = flowmap.phi(0, grid.vertex_coords)
    res, geom, levels = _run_sweep(grid, density, u, domain, lam, mode, n_levels, seg, bnd, phi0)
    top = np.zeros(flowmap.n_times)
    records = tuple(
        DynamicSweepRecord(r.s, r.volume, r.perimeter, r.ratio, r.admissible,
                           tuple(float(v) for v in (per_t[j] if j < len(per_t) else top)))
        for j, r in enumerate(res.records)
    )
    res = replace(res, records=records)
    return (res, levels) if return_levels else res


def build_dynamic_packing(grid, flowmap, basis, k, mode="neumann", selection="min_ratio",
                          n_levels=256, symmetry=False, trial_vectors=None, zero_tol=None):
    """Certified packing from nodal domains of a dynamic eigenfunction.

    As :func:`levelset.build_packing` with dynamic perimeters; ``basis``
    must come from :func:`assemble_dynamic`.
    """
    rk = r_k_from_basis(grid, basis, k, zero_tol=zero_tol, trial_vectors=trial_vectors,
                        symmetry=symmetry)
    u = rk.vector
    lam_w = min(rk.eigenvalue, 0.0)
    lam_k = float(basis.eigenvalues[k - 1])
    items = []
    for dom in nodal_domains(grid, u, zero_tol).domains:
        sw, lev = dynamic_sweep(grid, flowmap, u, dom, lam_w, mode, n_levels, return_levels=True)
        items.append((u, dom, sw, lev))
    return pack_from_items(grid, items, selection, lam_k, k=k, witness_eigenvalue=lam_w)


def polygon_area(points):
    """Signed shoelace area of a closed polygon given without repeating the first vertex."""
    p = np.asarray(points, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def advected_area(flowmap, t, polygon, refine=1):
    """Shoelace area of ``Phi_t(polygon)``.

    Vertices are advected without wrapping so the image stays contiguous;
    ``refine`` inserts equally spaced points on every edge first.
    """
    p = np.asarray(polygon, dtype=float)
    if refine > 1:
        q = np.roll(p, -1, axis=0)
        s = np.arange(refine) / refine
        p = (p[:, None, :] + s[None, :, None] * (q - p)[:, None, :]).reshape(-1, 2)
    return polygon_area(flowmap.map(t, p, wrap=False))
