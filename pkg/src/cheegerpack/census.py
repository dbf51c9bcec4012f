"""Analytic spectra, nodal counts and ``r_k`` lower bounds for model domains.

Families (eigenvalue, nodal count):

* torus ``(2 pi S^1)^2``: ``-(k1^2 + k2^2)``, ``max{4 k1 k2, 2 k1, 2 k2, 1}``
* cylinder ``2 pi S^1 x [0, pi]`` (Neumann): ``-(k1^2 + k2^2)``, ``(k2 + 1) max{2 k1, 1}``
* unit 3-ball (Dirichlet): ``-alpha_{k1,k2}^2``, ``k1 (k2 - k3 + 1) max{2 k3, 1}``
* sheared cylinder with ``1 + b^2 (|T|+1) / (12 (|T|-1)) = p^2 / q^2``:
  ``-(p^2 k1^2 + q^2 k2^2) / q^2``, ``max{2 k1, 1} (k2 + 1)``

Phases ``zeta in {0, pi/2}`` double every family member with a nonzero
angular frequency.  Eigenvalues are compared through exact integer keys
where possible; ties are broken by the quantum numbers.
"""

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ConfigError, NumericalError

__all__ = [
    "SpectrumEntry",
    "shear_ratio",
    "shear_b_from_pq",
    "enumerate_spectrum",
    "spherical_jn",
    "bessel_zero",
    "bessel_zero_bounds",
    "bessel_zero_table",
    "rk_formula",
    "rk_validity",
    "rk_lower_bound",
    "rk_table",
    "ball_threshold_check",
    "eigenvalue_count_bound",
    "census_table",
]

MANIFOLDS = ("torus", "cylinder", "ball", "shear")
BALL_C = 3 * math.pi - 8 / (3 * math.pi)


@dataclass(frozen=True)
class SpectrumEntry:
    """One basis eigenfunction.

    ``quantum`` is ``(k1, k2, zeta)`` (cylinder/shear), ``(k1, k2, zeta1,
    zeta2)`` (torus) or ``(k1, k2, k3, zeta)`` (ball), with ``zeta`` stored
    as 0 or 1 for phase ``0`` or ``pi/2``.  ``multiplicity`` counts the
    entries sharing this exact eigenvalue.
    """

    eigenvalue: float
    quantum: tuple
    nodal_count: int
    multiplicity: int
    key: object


def shear_ratio(b, t_max):
    """``1 + b^2 (|T| + 1) / (12 (|T| - 1))`` with ``|T| = t_max + 1``."""
    if t_max < 1:
        raise ConfigError("t_max must be at least 1")
    T = t_max + 1
    return 1.0 + b * b * (T + 1) / (12.0 * (T - 1))


def shear_b_from_pq(p, q, t_max):
    """Shear strength ``b`` for which the eigenvalue ratio equals ``p^2 / q^2``."""
    if not (isinstance(p, int) and isinstance(q, int) and p >= q >= 1):
        raise ConfigError("need integers p >= q >= 1")
    if t_max < 1:
        raise ConfigError("t_max must be at least 1")
    T = t_max + 1
    return math.sqrt((p * p / (q * q) - 1.0) * 12.0 * (T - 1) / (T + 1))


# ---------------------------------------------------------------------------
# spherical Bessel functions and zeros
# ---------------------------------------------------------------------------


def spherical_jn(n, x):
    """Spherical Bessel function ``j_n(x)`` for ``x > 0`` by three-term recurrence.

    Upward recurrence is used where ``x > n`` (where it is stable) and
    Miller's downward recurrence elsewhere, normalised by whichever of
    ``j_0``/``j_1`` is larger in magnitude.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    if n < 0 or np.any(x <= 0):
        raise ConfigError("spherical_jn needs n >= 0 and x > 0")
    s, c = np.sin(x), np.cos(x)
    j0 = s / x
    j1 = s / x ** 2 - c / x
    if n == 0:
        out = j0
    elif n == 1:
        out = j1
    else:
        out = np.empty_like(x)
        up = x > n
        if np.any(up):
            xm = x[up]
            a, b = j0[up], j1[up]
            for m in range(1, n):
                a, b = b, (2 * m + 1) / xm * b - a
            out[up] = b
        down = ~up
        if np.any(down):
            xm = x[down]
            N = n + 16 + int(math.sqrt(40 * (n + 1)))
            nxt = np.zeros_like(xm)
            cur = np.full_like(xm, 1e-300)
            vals = {}
            for m in range(N, 0, -1):
                prev = (2 * m + 1) / xm * cur - nxt
                nxt, cur = cur, prev
                # rescale to avoid overflow
                big = np.abs(cur) > 1e250
                if np.any(big):
                    cur = np.where(big, cur * 1e-250, cur)
                    nxt = np.where(big, nxt * 1e-250, nxt)
                    for key in vals:
                        vals[key] = np.where(big, vals[key] * 1e-250, vals[key])
                if m - 1 == n:
                    vals["n"] = cur.copy()
                if m - 1 == 1:
                    vals["1"] = cur.copy()
            vals["0"] = cur
            t0, t1 = j0[down], j1[down]
            use0 = np.abs(t0) >= np.abs(t1)
            scale = np.where(use0, t0 / vals["0"], t1 / vals["1"])
            out[down] = vals["n"] * scale
    return float(out[0]) if scalar else out


def _bisect(f, lo, hi, tol=1e-10, what="zero"):
    flo, fhi = f(lo), f(hi)
    if not (np.all(np.sign(flo) * np.sign(fhi) < 0)):
        raise NumericalError(f"bracketing failed for {what}: no sign change")
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        left = np.sign(fm) == np.sign(flo)
        lo = np.where(left, mid, lo)
        flo = np.where(left, fm, flo)
        hi = np.where(left, hi, mid)
    return 0.5 * (lo + hi)


def bessel_zero_bounds(k1, k2):
    """The elementary enclosure ``(pi k1 + k2 - 3.75, pi k1 + pi k2 / 2 + 0.03 - (k2 + 1/2)^2 / (2 m))``."""
    m = math.pi * k1 + 0.5 * math.pi * k2 + 0.03
    return math.pi * k1 + k2 - 3.75, m - (k2 + 0.5) ** 2 / (2 * m)


def bessel_zero_table(n1, n2, tol=1e-10):
    """Zeros ``alpha[k1 - 1, k2]`` for ``1 <= k1 <= n1``, ``0 <= k2 <= n2``.

    Row ``k2`` is bracketed by the interlacing
    ``alpha_{k1,k2-1} < alpha_{k1,k2} < alpha_{k1+1,k2-1}`` and bisected.

    Raises
    ------
    NumericalError
        A bracket without a sign change (recurrence breakdown).
    """
    if n1 < 1 or n2 < 0:
        raise ConfigError("need n1 >= 1 and n2 >= 0")
    width = n1 + n2
    k = np.arange(1, width + 1, dtype=float)
    row = _bisect(lambda x: spherical_jn(0, x), (k - 0.5) * np.pi, (k + 0.5) * np.pi, tol,
                  "j_0 zeros")
    table = np.empty((n1, n2 + 1))
    table[:, 0] = row[:n1]
    for n in range(1, n2 + 1):
        lo, hi = row[:-1], row[1:]
        row = _bisect(lambda x, n=n: spherical_jn(n, x), lo.copy(), hi.copy(), tol,
                      f"j_{n} zeros")
        table[:, n] = row[:n1]
    return table


def bessel_zero(k1, k2, tol=1e-10):
    """``k1``-th positive zero of ``j_{k2}``."""
    if k1 < 1 or k2 < 0:
        raise ConfigError("bessel_zero needs k1 >= 1 and k2 >= 0")
    return float(bessel_zero_table(k1, k2, tol)[k1 - 1, k2])


# ---------------------------------------------------------------------------
# spectra
# ---------------------------------------------------------------------------


def _phases(k):
    return (0,) if k == 0 else (0, 1)


def _entries_planar(manifold, R2, p=1, q=1):
    """All entries with integer key ``<= R2``."""
    out = []
    if manifold == "torus":
        kmax = math.isqrt(R2)
        for k1 in range(kmax + 1):
            for k2 in range(math.isqrt(R2 - k1 * k1) + 1):
                key = k1 * k1 + k2 * k2
                nod = max(4 * k1 * k2, 2 * k1, 2 * k2, 1)
                for z1 in _phases(k1):
                    for z2 in _phases(k2):
                        out.append((key, (k1, k2, z1, z2), nod))
    elif manifold == "cylinder":
        for k1 in range(math.isqrt(R2) + 1):
            for k2 in range(math.isqrt(R2 - k1 * k1) + 1):
                key = k1 * k1 + k2 * k2
                nod = (k2 + 1) * max(2 * k1, 1)
                for z in _phases(k1):
                    out.append((key, (k1, k2, z), nod))
    else:  # shear, key = p^2 k1^2 + q^2 k2^2
        for k1 in range(math.isqrt(R2 // (p * p)) + 1):
            rest = R2 - p * p * k1 * k1
            for k2 in range(math.isqrt(rest // (q * q)) + 1):
                key = p * p * k1 * k1 + q * q * k2 * k2
                nod = max(2 * k1, 1) * (k2 + 1)
                for z in _phases(k1):
                    out.append((key, (k1, k2, z), nod))
    return out


def _entries_ball(R):
    """All entries with ``alpha <= R``."""
    n1 = max(1, int((R + 3.75) / math.pi) + 1)
    n2 = max(0, int(R + 3.75) + 1)
    alpha = bessel_zero_table(n1, n2)
    out = []
    for k1 in range(1, n1 + 1):
        for k2 in range(n2 + 1):
            a = float(alpha[k1 - 1, k2])
            if a > R:
                continue
            for k3 in range(k2 + 1):
                nod = k1 * (k2 - k3 + 1) * max(2 * k3, 1)
                for z in _phases(k3):
                    out.append((a * a, (k1, k2, k3, z), nod))
    return out


def _shear_pq(params):
    p, q = params.get("p"), params.get("q")
    t_max = params.get("t_max", 2)
    if p is None or q is None:
        raise ConfigError("shear spectra need integers p >= q >= 1 (see shear_b_from_pq)")
    shear_b_from_pq(p, q, t_max)  # validates
    return p, q


def enumerate_spectrum(manifold, count, **params):
    """The ``count`` eigenvalues nearest zero, with multiplicity, in decreasing order.

    Parameters
    ----------
    manifold : {'torus', 'cylinder', 'ball', 'shear'}
    count : int
    **params
        ``p``, ``q`` (and ``t_max``) for the shear.

    Returns
    -------
    list of SpectrumEntry
        Ties are broken by the quantum numbers.  Every entry tied with the
        last one is included, so the list may exceed ``count``.
    """
    if manifold not in MANIFOLDS:
        raise ConfigError(f"manifold must be one of {MANIFOLDS}, got {manifold!r}")
    if count < 1:
        raise ConfigError("count must be at least 1")
    if manifold == "ball":
        R = 4.0
        while True:
            raw = _entries_ball(R)
            if len(raw) >= count:
                break
            R *= 1.3
        scale = 1
    else:
        p, q = _shear_pq(params) if manifold == "shear" else (1, 1)
        R2 = 4 * p * p
        while True:
            raw = _entries_planar(manifold, R2, p, q)
            if len(raw) >= count:
                break
            R2 *= 2
        scale = q * q
    raw.sort(key=lambda e: (e[0], e[1]))
    cut = raw[count - 1][0]
    raw = [e for e in raw if e[0] <= cut]
    mult = {}
    for key, _, _ in raw:
        mult[key] = mult.get(key, 0) + 1
    out = []
    for key, qn, nod in raw:
        lam = 0.0 - float(Fraction(key, scale) if manifold != "ball" else key)
        out.append(SpectrumEntry(lam, qn, nod, mult[key], key))
    return out


# ---------------------------------------------------------------------------
# r_k bounds
# ---------------------------------------------------------------------------


def rk_validity(manifold, **params):
    """Smallest ``k`` for which the closed-form lower bound is stated."""
    if manifold == "torus":
        return 6
    if manifold == "cylinder":
        return 5
    if manifold == "ball":
        return 18
    if manifold == "shear":
        p, q = _shear_pq(params)
        return math.ceil(math.pi * p * q + math.sqrt(2) * (p + 2 * q) + 1)
    raise ConfigError(f"manifold must be one of {MANIFOLDS}, got {manifold!r}")


def rk_formula(manifold, k, **params):
    """Closed-form lower bound on ``r_k``.

    Raises
    ------
    ConfigError
        ``k`` below the validity threshold.
    """
    k0 = rk_validity(manifold, **params)
    if k < k0:
        raise ConfigError(f"the {manifold} bound holds for k >= {k0}, got k = {k}")
    if manifold == "torus":
        return max(math.ceil(2 * k / math.pi - 4.7 * math.sqrt(k) + 8.4), 4)
    if manifold == "cylinder":
        return max(math.ceil(2 * k / math.pi - 2.7 * math.sqrt(k) + 2.2), 4)
    if manifold == "ball":
        return max(math.ceil(0.119 * (k ** (1.0 / 3.0) - 6.4) ** 3), 8)
    p, q = _shear_pq(params)
    return max(math.ceil(2 * k / math.pi - 2.8 * math.sqrt(p * q * k) + 2 * p * q), 2 * p * q + 2 * q)


def _enumerated_rk(entries):
    """``r_k`` for every ``k`` from a sorted entry list (ties share the shell maximum)."""
    nod = np.array([e.nodal_count for e in entries])
    keys = [e.key for e in entries]
    cm = np.maximum.accumulate(nod)
    out = np.empty(len(entries), dtype=int)
    i = len(entries) - 1
    while i >= 0:
        j = i
        while j > 0 and keys[j - 1] == keys[i]:
            j -= 1
        out[j:i + 1] = cm[i]
        i = j - 1
    return out


def rk_lower_bound(manifold, k, **params):
    """``(formula_value, enumerated_r_k)`` for one ``k``."""
    formula = rk_formula(manifold, k, **params)
    entries = enumerate_spectrum(manifold, k, **params)
    return formula, int(_enumerated_rk(entries)[k - 1])


def rk_table(manifold, kmax, **params):
    """Arrays ``(k, lambda_k, enumerated r_k, formula)`` for ``k0 <= k <= kmax``."""
    entries = enumerate_spectrum(manifold, kmax, **params)
    rk = _enumerated_rk(entries)
    k0 = rk_validity(manifold, **params)
    ks = np.arange(k0, kmax + 1)
    lam = np.array([entries[k - 1].eigenvalue for k in ks])
    form = np.array([rk_formula(manifold, int(k), **params) for k in ks])
    return ks, lam, rk[ks - 1], form


def ball_threshold_check():
    """``(lambda_17, -(c - 1.46)^2, lambda_18, holds)`` with ``c = 3 pi - 8 / (3 pi)``."""
    e = enumerate_spectrum("ball", 18)
    l17, l18 = e[16].eigenvalue, e[17].eigenvalue
    mid = -((BALL_C - 1.46) ** 2)
    return l17, mid, l18, bool(l17 >= mid >= l18)


def eigenvalue_count_bound(manifold, k1, **params):
    """Lattice-point cross-check: ``(count, bound)`` of eigenvalues above the threshold shell.

    torus / cylinder: eigenvalues ``>= -2 (k1 + 1)^2`` against
    ``2 pi (k1+1)^2 + 4 sqrt2 (k1+1) + 1`` / ``pi (k1+1)^2 + 3 floor(sqrt2 (k1+1)) + 1``;
    shear: eigenvalues ``>= -2 p^2 k1^2 / q^2`` against
    ``pi p k1^2 / q + 2 floor(sqrt2 k1) + floor(sqrt2 p k1 / q) + 1``.
    """
    if manifold in ("torus", "cylinder"):
        m = k1 + 1
        R2 = 2 * m * m
        count = len(_entries_planar(manifold, R2))
        if manifold == "torus":
            bound = 2 * math.pi * m * m + 4 * math.sqrt(2) * m + 1
        else:
            bound = math.pi * m * m + 3 * math.floor(math.sqrt(2) * m) + 1
        return count, bound
    if manifold == "shear":
        p, q = _shear_pq(params)
        count = len(_entries_planar("shear", 2 * p * p * k1 * k1, p, q))
        bound = (math.pi * p / q * k1 * k1 + 2 * math.floor(math.sqrt(2) * k1)
                 + math.floor(math.sqrt(2) * p * k1 / q) + 1)
        return count, bound
    raise ConfigError(f"no lattice count for {manifold!r}")


def census_table(manifold, kmax, **params):
    """Rows ``(k, lambda_k, enumerated_r_k, formula_value, 2 sqrt(-lambda_k))``."""
    ks, lam, rk, form = rk_table(manifold, kmax, **params)
    return [
        (int(k), float(l), int(r), int(f), float(2 * math.sqrt(-l)))
        for k, l, r, f in zip(ks, lam, rk, form)
    ]
