import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from wssfem import linalg
from wssfem.linalg import SolverError, SparseSystem, TripletBuffer, apply_dirichlet, assemble, factorize, solve


def test_duplicates_summed():
    A = assemble(([0, 0], [0, 0], [1.0, 2.0]), (1, 1))
    assert A.nnz == 1 and A[0, 0] == 3.0


def test_identity_matvec():
    A = assemble(([0, 1, 2], [0, 1, 2], [1.0, 1.0, 1.0]), (3, 3))
    np.testing.assert_array_equal(A @ np.array([1.0, 2.0, 3.0]), [1, 2, 3])


def test_empty():
    A = assemble(([], [], []), (2, 2))
    np.testing.assert_array_equal(A @ np.ones(2), [0, 0])


def test_out_of_bounds():
    with pytest.raises(IndexError):
        assemble(([0, 2], [0, 0], [1.0, 1.0]), (2, 2))
    buf = TripletBuffer()
    buf.add([5], [0], [1.0])
    with pytest.raises(IndexError):
        buf.tocsr((2, 2))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_order_independence(seed):
    rng = np.random.default_rng(seed)
    n = 12
    rows = rng.integers(0, n, 80)
    cols = rng.integers(0, n, 80)
    vals = rng.integers(-4, 5, 80).astype(float)  # integers: sums exact in any order
    perm = rng.permutation(80)
    A = assemble((rows, cols, vals), (n, n))
    B = assemble((rows[perm], cols[perm], vals[perm]), (n, n))
    assert (A != B).nnz == 0
    assert np.all(np.diff(A.indptr) >= 0)
    for i in range(n):
        idx = A.indices[A.indptr[i] : A.indptr[i + 1]]
        assert np.all(np.diff(idx) > 0)
    dense = np.zeros((n, n))
    np.add.at(dense, (rows, cols), vals)
    np.testing.assert_array_equal(A.toarray(), dense)


def test_triplet_buffer_matches_dense():
    rng = np.random.default_rng(3)
    dofs = rng.integers(0, 20, (50, 4))
    local = rng.standard_normal((50, 4, 4))
    buf = TripletBuffer()
    buf.CHUNK = 37  # force many chunks
    buf.add_local(dofs, dofs, local)
    other = TripletBuffer()
    other.add([19], [0], [2.5])
    buf.merge(other)
    dense = np.zeros((20, 20))
    for d, l in zip(dofs, local):
        np.add.at(dense, (d[:, None], d[None, :]), l)
    dense[19, 0] += 2.5
    np.testing.assert_allclose(buf.tocsr((20, 20)).toarray(), dense, rtol=1e-14, atol=1e-14)


def test_diag_solve():
    x = solve(SparseSystem(sp.csr_matrix(np.diag([2.0, 4.0])), np.array([2.0, 8.0])))
    np.testing.assert_allclose(x, [1.0, 2.0], rtol=0, atol=1e-15)


@pytest.mark.parametrize("method", ["superlu", "pardiso"])
def test_random_spd(method):
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(2, 30))
        B = sp.random(n, n, density=0.3, random_state=rng) + sp.eye(n)
        A = sp.csr_matrix(B @ B.T + sp.eye(n))
        b = rng.standard_normal(n)
        x = solve(SparseSystem(A, b), method=method)
        assert np.linalg.norm(A @ x - b) / (1 + np.linalg.norm(b)) <= 1e-10


def test_random_saddle_point():
    rng = np.random.default_rng(1)
    for _ in range(10):
        n, m = int(rng.integers(6, 30)), int(rng.integers(1, 5))
        K = rng.standard_normal((n, n))
        K = K @ K.T + n * np.eye(n)
        B = rng.standard_normal((m, n))
        A = sp.csr_matrix(np.block([[K, B.T], [B, np.zeros((m, m))]]))
        b = rng.standard_normal(n + m)
        x = solve(SparseSystem(A, b))
        assert np.linalg.norm(A @ x - b) / (1 + np.linalg.norm(b)) <= 1e-10


def test_large_system_uses_pardiso_and_agrees():
    n = 3000
    A = sp.diags([-1.0, 2.5, -1.0], [-1, 0, 1], shape=(n, n), format="csr")
    b = np.ones(n)
    x1 = solve(SparseSystem(A, b))
    x2 = solve(SparseSystem(A, b), method="superlu")
    np.testing.assert_allclose(x1, x2, rtol=1e-12)


def test_singular_empty_row():
    A = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(SolverError, match="pivot row 1"):
        solve(SparseSystem(A, np.ones(2)))


def test_singular_numeric():
    A = sp.csr_matrix(np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
    with pytest.raises(SolverError, match="singular|residual|non-finite"):
        solve(SparseSystem(A, np.array([1.0, 2.0, 3.0])), method="superlu")


def test_dimension_mismatch():
    with pytest.raises(SolverError):
        solve(SparseSystem(sp.eye(3, format="csr"), np.ones(2)))


def test_deterministic():
    rng = np.random.default_rng(7)
    A = sp.random(40, 40, density=0.2, random_state=rng) + 5 * sp.eye(40)
    b = rng.standard_normal(40)
    x1 = solve(SparseSystem(sp.csr_matrix(A), b))
    x2 = solve(SparseSystem(sp.csr_matrix(A), b))
    assert np.array_equal(x1, x2)


def test_reuse_factorization():
    A = sp.csr_matrix(np.array([[4.0, 1.0], [1.0, 3.0]]))
    lu = factorize(A)
    for b in (np.array([1.0, 0.0]), np.array([0.0, 1.0])):
        np.testing.assert_allclose(A @ solve(SparseSystem(A, b), lu=lu), b, atol=1e-14)


def test_apply_dirichlet_lifts_columns():
    A = sp.csr_matrix(np.array([[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 2.0]]))
    b = np.zeros(3)
    A2, b2 = apply_dirichlet(A, b, np.array([0, 2]), np.array([1.0, 3.0]))
    x = solve(SparseSystem(A2, b2))
    np.testing.assert_allclose(x, [1.0, 2.0, 3.0], atol=1e-14)
    D = A2.toarray()
    np.testing.assert_allclose(D, D.T)


def test_matrix_market_dump(tmp_path):
    import scipy.io

    A = assemble(([0, 1], [1, 0], [1.5, -2.0]), (2, 2))
    path = tmp_path / "a.mtx"
    linalg.dump_matrix_market(A, path)
    np.testing.assert_array_equal(scipy.io.mmread(str(path)).toarray(), A.toarray())
