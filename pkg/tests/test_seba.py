import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose, assert_array_equal

from cheegerpack.errors import ConfigError, NumericalError
from cheegerpack.levelset import superlevel_sweep
from cheegerpack.nodal import nodal_domains
from cheegerpack.seba import (
    canonicalize,
    min_disjoint_threshold,
    seba_certify,
    seba_combine,
    seba_rotate,
    seba_vectors,
    soft_threshold,
)

# rows of the reference rotation for the Dirichlet interval, k = l = 3
REFERENCE_ALPHA = np.array([
    [0.77, 0.00, -0.64],
    [0.45, -0.71, 0.54],
    [0.45, 0.71, 0.54],
])

finite = st.floats(-10, 10, allow_nan=False)


def test_soft_threshold_example():
    assert_allclose(soft_threshold([1.0, -0.5, 0.2], 0.4), [0.6, -0.1, 0.0], atol=1e-15)


def test_soft_threshold_edge_cases():
    f = np.array([0.3, -2.0, 1.5])
    assert_array_equal(soft_threshold(f, 0.0), f)
    assert_array_equal(soft_threshold(f, 2.0), 0.0)
    assert_array_equal(soft_threshold(f, 5.0), 0.0)
    with pytest.raises(ConfigError):
        soft_threshold(f, -0.1)


@settings(max_examples=200)
@given(f=arrays(np.float64, st.integers(1, 40), elements=finite),
       a=st.floats(0, 5), da=st.floats(0, 5))
def test_soft_threshold_monotonicity(f, a, da):
    t = soft_threshold(f, a)
    t2 = soft_threshold(f, a + da)
    assert np.linalg.norm(t) <= np.linalg.norm(f) + 1e-12
    assert np.linalg.norm(t2) <= np.linalg.norm(t) + 1e-12
    # support shrinks as the threshold grows
    assert np.all((t2 != 0) <= (t != 0))
    # sign is preserved
    assert np.all(np.sign(t[t != 0]) == np.sign(f[t != 0]))


@pytest.fixture(scope="module")
def interval_seba(interval_case):
    U, V = seba_vectors(interval_case.basis, 3)
    rot = seba_rotate(V, 3)
    alpha = canonicalize(rot.alpha, U, interval_case.grid.vertex_coords)
    return U, V, rot, alpha


def _match_up_to_sign_and_permutation(alpha, ref, tol):
    for perm in itertools.permutations(range(len(ref))):
        a = alpha[list(perm)]
        signs = np.sign(np.sum(a * ref, axis=1))
        if np.all(np.abs(a * signs[:, None] - ref) <= tol):
            return True
    return False


def test_interval_rotation_matches_reference(interval_seba):
    _, _, rot, alpha = interval_seba
    assert rot.converged
    assert _match_up_to_sign_and_permutation(alpha, REFERENCE_ALPHA, 0.02)


def test_rotation_rows_are_orthonormal(interval_seba):
    _, _, rot, alpha = interval_seba
    assert_allclose(alpha @ alpha.T, np.eye(3), atol=1e-8)
    assert_allclose(rot.alpha @ rot.alpha.T, np.eye(3), atol=1e-8)


def test_rotation_preserves_span(interval_case, interval_seba):
    U, _, _, alpha = interval_seba
    F = U @ alpha.T
    B = interval_case.op.full_mass
    E = interval_case.basis.eigenvectors[:, :3]
    P = E @ (E.T @ (B @ F))
    assert np.max(np.linalg.norm(F - P, axis=0) / np.linalg.norm(F, axis=0)) <= 1e-8


def test_threshold_interval(interval_seba):
    U, _, _, alpha = interval_seba
    a = min_disjoint_threshold(U @ alpha.T)
    assert a == pytest.approx(0.84, abs=0.01)


def test_one_dimensional_rotation():
    v = np.random.default_rng(1).standard_normal((50, 1))
    v /= np.linalg.norm(v)
    rot = seba_rotate(v)
    assert rot.alpha.shape == (1, 1)
    assert abs(rot.alpha[0, 0]) == pytest.approx(1.0)


def test_disjoint_basis_is_a_fixed_point():
    rng = np.random.default_rng(7)
    p, k = 90, 3
    S = np.zeros((p, k))
    for j in range(k):
        S[30 * j: 30 * (j + 1), j] = rng.uniform(0.5, 1.0, 30)
    S /= np.linalg.norm(S, axis=0)
    Q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    rot = seba_rotate(S @ Q.T)
    # recovered rotation undoes the mixing: alpha Q is a signed permutation
    P = rot.alpha @ Q
    assert_allclose(np.abs(P).max(axis=1), 1.0, atol=1e-6)
    assert_allclose(np.abs(P).sum(axis=1), 1.0, atol=1e-6)


def test_threshold_of_disjoint_functions_is_zero():
    F = np.array([[1.0, 0.0], [0.5, 0.0], [0.0, 2.0]])
    assert min_disjoint_threshold(F) == 0.0


def test_threshold_of_identical_functions_fails():
    f = np.sin(np.linspace(0, np.pi, 20))
    with pytest.raises(NumericalError):
        min_disjoint_threshold(np.column_stack([f, f]))


def test_threshold_needs_two_columns():
    with pytest.raises(ConfigError):
        min_disjoint_threshold(np.ones((5, 1)))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1))
def test_threshold_is_minimal(seed):
    rng = np.random.default_rng(seed)
    x = np.linspace(0, 1, 60)
    c = np.sort(rng.uniform(0.1, 0.9, 2))
    if c[1] - c[0] < 0.15:
        return
    F = np.column_stack([np.exp(-((x - ci) / 0.12) ** 2) for ci in c])
    a = min_disjoint_threshold(F)
    assert not np.any((np.abs(F) > a).all(axis=1))
    lower = a - 2e-4 * np.abs(F).max()
    if lower > 0:
        assert np.any((np.abs(F) > lower).all(axis=1))


@pytest.fixture(scope="module")
def interval_cert(interval_case, interval_seba):
    U, _, _, alpha = interval_seba
    a = min_disjoint_threshold(U @ alpha.T)
    return seba_certify(*interval_case.fields, interval_case.basis, alpha, a, "dirichlet")


def test_certificate_interval_bound(interval_cert):
    assert interval_cert.rayleigh_bound == pytest.approx(7.3, rel=0.02)
    assert interval_cert.max_ratio <= interval_cert.rayleigh_bound
    assert interval_cert.packing.certificate["holds"]
    assert interval_cert.chain_holds


def test_certificate_level_endpoints(interval_cert):
    ends = np.sort(np.sqrt(interval_cert.s_upper))
    assert_allclose(ends, [0.51, 0.55, 0.55], atol=0.01)


def test_certificate_retention_and_measure(interval_cert):
    ret = interval_cert.result.retention
    assert np.all((0 <= ret) & (ret <= 1))
    for sw, lb in zip(interval_cert.sweeps, interval_cert.smeasure_bounds):
        assert sw.nonempty
        assert lb <= sw.S_measure_estimate + sw.slack


def test_certificate_is_self_verifying(interval_cert):
    d = interval_cert.as_dict()
    c = d["certificate"]
    assert c["lambda_k"] <= -0.25 * c["max_ratio"] ** 2 * min(d["retention"]) + 1e-12
    assert c["scale"] == pytest.approx(min(d["retention"]))


def test_zero_threshold_single_function_reduces_to_plain_sweep(interval_case):
    g, m, w = interval_case.fields
    basis = interval_case.basis
    cert = seba_certify(g, m, w, basis, np.array([[1.0]]), 0.0, "dirichlet")
    u, _ = seba_vectors(basis, 1)
    u = u[:, 0]
    dom = nodal_domains(g, u).domains[0]
    plain = superlevel_sweep(g, m, w, u, dom, -cert.rayleigh[0], "dirichlet")
    assert_allclose(cert.sweeps[0].ratio, plain.ratio)
    assert cert.result.retention[0] == pytest.approx(1.0)
    # the Rayleigh quotient of the first eigenfunction is -lambda_1
    assert cert.rayleigh[0] == pytest.approx(-basis.eigenvalues[0], rel=1e-9)


def test_overlapping_supports_rejected(interval_case, interval_seba):
    U, _, _, alpha = interval_seba
    with pytest.raises(NumericalError):
        seba_certify(*interval_case.fields, interval_case.basis, alpha, 0.1, "dirichlet")


def test_combine_reports_disjointness(interval_case, interval_seba):
    _, _, _, alpha = interval_seba
    assert not seba_combine(interval_case.basis, alpha, 0.0).disjoint
    assert seba_combine(interval_case.basis, alpha, 0.9).disjoint


def test_mass_normalisation(interval_case):
    U, V = seba_vectors(interval_case.basis, 3, "mass")
    assert_allclose(U, interval_case.basis.eigenvectors[:, :3])
    assert_allclose(np.linalg.norm(V, axis=0), 1.0)
    with pytest.raises(ConfigError):
        seba_vectors(interval_case.basis, 3, "l1")
    with pytest.raises(ConfigError):
        seba_vectors(interval_case.basis, 11)


def test_canonical_order_and_sign(interval_seba):
    U, _, _, alpha = interval_seba
    F = U @ alpha.T
    assert np.all(F[np.argmax(np.abs(F), axis=0), range(3)] > 0)
    # supports ordered left to right
    peaks = np.argmax(F, axis=0)
    assert np.all(np.diff(peaks) > 0)
