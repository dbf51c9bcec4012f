import numpy as np
import pytest
from numpy.testing import assert_allclose

from cheegerpack.assembly import assemble
from cheegerpack.eigensolve import smallest_eigenpairs
from cheegerpack.errors import ConfigError, ConvergenceError
from cheegerpack.manifold import build_grid
from cheegerpack.nodal import nodal_domains

TWO_PI = 2 * np.pi


def test_interval_dirichlet(interval_case):
    lam = interval_case.basis.eigenvalues[:3]
    assert_allclose(lam, [-1.0, -4.0, -9.0], rtol=1e-3)


def test_torus_neumann(torus_case):
    assert_allclose(torus_case.basis.eigenvalues[:5], [0, -1, -1, -1, -1], atol=1e-2)


def test_cylinder_neumann(cylinder_case):
    assert_allclose(cylinder_case.basis.eigenvalues[:5], [0, -1, -1, -1, -2], atol=1e-2)


@pytest.mark.parametrize("case", ["interval_case", "torus_case", "cylinder_case"])
def test_basis_invariants(case, request):
    c = request.getfixturevalue(case)
    b = c.basis
    lam = b.eigenvalues
    assert np.all(lam <= 0)
    assert np.all(np.diff(lam) <= 0)
    U = b.eigenvectors
    G = U.T @ (c.op.full_mass @ U)
    assert np.max(np.abs(G - np.eye(len(b)))) <= 1e-8
    assert np.all(b.residuals <= 1e-8)
    # stored residuals are the actual ones
    K, B = c.op.full_stiffness, c.op.full_mass
    free = c.op.free_vertices
    r = (K @ U + (B @ U) * lam)[free]
    assert_allclose(np.linalg.norm(r, axis=0) / np.linalg.norm((B @ U)[free], axis=0),
                    b.residuals, rtol=1e-6, atol=1e-14)


@pytest.mark.parametrize("case", ["torus_case", "cylinder_case"])
def test_neumann_ground_state_is_constant(case, request):
    b = request.getfixturevalue(case).basis
    assert abs(b.eigenvalues[0]) < 1e-8
    u = b.vector(1)
    assert np.ptp(u) <= 1e-6 * np.max(np.abs(u))


def test_dirichlet_ground_state_is_negative_eigenvalue(interval_case):
    assert interval_case.basis.eigenvalues[0] < 0


def test_torus_eigenspace_projector(torus_case):
    """The computed lambda = -1 eigenspace matches span{cos x, sin x, cos y, sin y}."""
    c = torus_case
    B = c.op.full_mass
    U = c.basis.eigenvectors[:, 1:5]
    x, y = c.grid.vertex_coords.T
    W = np.column_stack([np.cos(x), np.sin(x), np.cos(y), np.sin(y)])
    # B-orthonormalise the analytic modes
    L = np.linalg.cholesky(W.T @ (B @ W))
    W = np.linalg.solve(L, W.T).T
    P_u = U @ (U.T @ B)
    P_w = W @ (W.T @ B)
    assert np.max(np.abs(P_u - P_w)) < 1e-2


def _interval_lambda(n, k):
    grid, m, w = build_grid("interval", n, np.pi)
    return smallest_eigenpairs(assemble(grid, m, w, "dirichlet"), k).eigenvalues


def _torus_lambda(n, k):
    grid, m, w = build_grid("torus", (n, n), (TWO_PI, TWO_PI))
    return smallest_eigenpairs(assemble(grid, m, w), k).eigenvalues


@pytest.mark.parametrize(
    "solve, sizes, exact",
    [
        (_interval_lambda, (33, 65, 129), np.array([-1.0, -4.0, -9.0])),
        (_torus_lambda, (16, 32, 64), np.array([0, -1, -1, -1, -1, -2.0])),
    ],
)
def test_eigenvalue_convergence_is_second_order(solve, sizes, exact):
    errs = np.array([np.max(np.abs(solve(n, len(exact)) - exact)) for n in sizes])
    rates = np.log2(errs[:-1] / errs[1:])
    assert np.all(rates > 1.8), rates


def test_dense_and_sparse_paths_agree():
    grid, m, w = build_grid("cylinder", (24, 13), (TWO_PI, np.pi), phi="0.2*sin(x)")
    op = assemble(grid, m, w)
    sparse = smallest_eigenpairs(op, 6)
    grid2, m2, w2 = build_grid("cylinder", (24, 13), (TWO_PI, np.pi), phi="0.2*sin(x)")
    from cheegerpack import eigensolve

    old = eigensolve._DENSE_LIMIT
    eigensolve._DENSE_LIMIT = 10 ** 6
    try:
        dense = smallest_eigenpairs(assemble(grid2, m2, w2), 6)
    finally:
        eigensolve._DENSE_LIMIT = old
    assert_allclose(sparse.eigenvalues, dense.eigenvalues, atol=1e-9)


def test_deterministic(cylinder_case):
    again = smallest_eigenpairs(cylinder_case.op, 10)
    np.testing.assert_array_equal(again.eigenvalues, cylinder_case.basis.eigenvalues)
    np.testing.assert_array_equal(again.eigenvectors, cylinder_case.basis.eigenvectors)


@pytest.mark.parametrize("count", [0, 10 ** 6])
def test_bad_count(count):
    grid, m, w = build_grid("interval", 20, 1.0)
    with pytest.raises(ConfigError):
        smallest_eigenpairs(assemble(grid, m, w, "dirichlet"), count)


def test_tiny_budget_raises_convergence_error():
    grid, m, w = build_grid("torus", (40, 40), (TWO_PI, TWO_PI))
    with pytest.raises(ConvergenceError):
        smallest_eigenpairs(assemble(grid, m, w), 8, max_restarts=1)


@pytest.mark.parametrize(
    "kind, res, ext, bc",
    [
        ("interval", 201, np.pi, "dirichlet"),
        ("rectangle", (41, 29), (1.0, np.sqrt(2) / 2 + 0.05), "dirichlet"),
        ("rectangle", (41, 29), (1.0, np.sqrt(2) / 2 + 0.05), "neumann"),
    ],
)
def test_courant_bound_on_simple_spectra(kind, res, ext, bc):
    grid, m, w = build_grid(kind, res, ext)
    b = smallest_eigenpairs(assemble(grid, m, w, bc), 8)
    gaps = np.abs(np.diff(b.eigenvalues)) / np.maximum(np.abs(b.eigenvalues[1:]), 1.0)
    assert np.all(gaps > 0.02), "test domain must have a simple spectrum"
    for k in range(1, len(b) + 1):
        assert nodal_domains(grid, b.vector(k)).count <= k
