"""Sparse assembly and direct solves."""

from __future__ import annotations

import glob
import logging
import os
import sys
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Factorization failed or the residual check was not met."""


@dataclass(eq=False)
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def assemble(triplets, shape) -> sp.csr_matrix:
    """CSR matrix from (rows, cols, values); duplicates are summed.

    Duplicates are summed in input order, so the result is deterministic
    for a fixed triplet order.
    """
    rows, cols, vals = (np.asarray(a).ravel() for a in triplets)
    n, m = shape
    if rows.size and (rows.min() < 0 or cols.min() < 0 or rows.max() >= n or cols.max() >= m):
        raise IndexError(f"triplet index out of bounds for shape {shape}")
    A = sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def _index_dtype(*arrays):
    top = max((int(a.max()) for a in arrays if a.size), default=0)
    return np.int32 if top < np.iinfo(np.int32).max else np.int64


class TripletBuffer:
    """Accumulates local matrix blocks for one assembled matrix.

    Blocks are compressed to CSR as they arrive (in bounded chunks), so
    peak memory stays near the size of the final matrix.
    """

    CHUNK = 4_000_000

    def __init__(self):
        self.parts: list[sp.csr_matrix] = []

    def _push(self, rows, cols, vals):
        if rows.size == 0:
            return
        if rows.min() < 0 or cols.min() < 0:
            raise IndexError("negative triplet index")
        idx = _index_dtype(rows, cols)
        shape = (int(rows.max()) + 1, int(cols.max()) + 1)
        A = sp.coo_matrix((vals, (rows.astype(idx), cols.astype(idx))), shape=shape).tocsr()
        A.sum_duplicates()
        self.parts.append(A)

    def add_local(self, row_dofs, col_dofs, local):
        """Scatter local matrices (n, a, b) with dof arrays (n, a) and (n, b)."""
        row_dofs = np.asarray(row_dofs)
        col_dofs = np.asarray(col_dofs)
        local = np.asarray(local, dtype=float)
        n, a = row_dofs.shape
        b = col_dofs.shape[1]
        step = max(1, self.CHUNK // max(1, a * b))
        for s in range(0, n, step):
            r = row_dofs[s : s + step]
            c = col_dofs[s : s + step]
            k = len(r)
            self._push(
                np.broadcast_to(r[:, :, None], (k, a, b)).ravel(),
                np.broadcast_to(c[:, None, :], (k, a, b)).ravel(),
                local[s : s + step].ravel(),
            )

    def add(self, rows, cols, vals):
        self._push(np.asarray(rows).ravel(), np.asarray(cols).ravel(), np.asarray(vals, dtype=float).ravel())

    def merge(self, other: "TripletBuffer") -> None:
        self.parts.extend(other.parts)

    def tocsr(self, shape) -> sp.csr_matrix:
        n, m = shape
        out = sp.csr_matrix(shape)
        for A in self.parts:
            if A.shape[0] > n or A.shape[1] > m:
                raise IndexError(f"triplet index out of bounds for shape {shape}")
            A = A.copy()
            A.resize(shape)
            out = out + A
        out = sp.csr_matrix(out)
        out.sum_duplicates()
        out.sort_indices()
        return out


def scatter_vector(dofs, local, size) -> np.ndarray:
    return np.bincount(np.asarray(dofs).ravel(), weights=np.asarray(local).ravel(), minlength=size)


def _structural_zero(A: sp.csr_matrix) -> int | None:
    B = A.copy()
    B.eliminate_zeros()
    empty_rows = np.flatnonzero(np.diff(B.indptr) == 0)
    if empty_rows.size:
        return int(empty_rows[0])
    empty_cols = np.flatnonzero(np.diff(B.tocsc().indptr) == 0)
    if empty_cols.size:
        return int(empty_cols[0])
    return None


def _singular_row(A: sp.csr_matrix) -> int | None:
    row = _structural_zero(A)
    if row is not None:
        return row
    if A.shape[0] <= 3000:
        _, r = np.linalg.qr(A.toarray())
        d = np.abs(np.diag(r))
        bad = np.flatnonzero(d <= 1e-12 * max(d.max(), 1e-300))
        if bad.size:
            return int(bad[0])
    return None


# Systems below this size always use SuperLU (exact singularity diagnostics).
SMALL_SYSTEM = 2000


def _locate_mkl() -> None:
    if "PYPARDISO_MKL_RT" in os.environ:
        return
    candidates = [os.path.join(sys.prefix, "lib"), "/usr/local/lib", "/usr/lib", "/usr/lib/x86_64-linux-gnu"]
    for d in candidates:
        hits = sorted(glob.glob(os.path.join(d, "libmkl_rt.so*")))
        if hits:
            os.environ["PYPARDISO_MKL_RT"] = hits[0]
            return


@lru_cache(maxsize=1)
def _pardiso_module():
    _locate_mkl()
    try:
        import pypardiso
    except (ImportError, OSError) as exc:
        log.info("PARDISO unavailable (%s); using SuperLU", exc)
        return None
    return pypardiso


class _PardisoFactor:
    def __init__(self, A: sp.csr_matrix, pypardiso):
        self.A = sp.csr_matrix(A)
        self.solver = pypardiso.PyPardisoSolver(mtype=11)
        self.solver.set_statistical_info_off()
        self.solver.factorize(self.A)

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self.solver.solve(self.A, np.ascontiguousarray(b, dtype=float))

    def free(self) -> None:
        # MKL keeps the factors until told otherwise
        if self.solver is not None:
            self.solver.free_memory(everything=True)
            self.solver = None

    def __del__(self):
        try:
            self.free()
        except Exception:
            pass


def factorize(A: sp.spmatrix, method: str = "auto"):
    """LU factorization object with a ``solve(b)`` method.

    ``method`` is ``"superlu"``, ``"pardiso"`` or ``"auto"`` (PARDISO for
    large systems when MKL is available, SuperLU otherwise).
    """
    A = sp.csr_matrix(A)
    row = _structural_zero(A)
    if row is not None:
        raise SolverError(f"singular factorization (pivot row {row}): structurally empty row or column")
    if method in ("auto", "pardiso") and (method == "pardiso" or A.shape[0] >= SMALL_SYSTEM):
        mod = _pardiso_module()
        if mod is not None:
            return _PardisoFactor(A, mod)
        if method == "pardiso":
            raise SolverError("PARDISO requested but MKL runtime not found")
    try:
        return spla.splu(sp.csc_matrix(A), permc_spec="COLAMD")
    except RuntimeError as exc:
        row = _singular_row(A)
        where = f"pivot row {row}" if row is not None else "pivot row not identified"
        raise SolverError(f"singular factorization ({where}): {exc}") from None


def solve(system: SparseSystem, rtol: float = 1e-10, lu=None, method: str = "auto") -> np.ndarray:
    """Direct LU solve with a residual check ||Ax - b|| / (1 + ||b||) <= rtol."""
    A, b = system.matrix, system.rhs
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise SolverError(f"inconsistent system dimensions {A.shape} and {b.shape}")
    owned = lu is None
    if owned:
        lu = factorize(A, method)
    try:
        x = _checked_solve(A, b, lu, rtol)
    finally:
        if owned and isinstance(lu, _PardisoFactor):
            lu.free()
    return x


def _checked_solve(A, b, lu, rtol):
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise SolverError("solution contains non-finite values (singular system?)")
    res = np.linalg.norm(A @ x - b) / (1.0 + np.linalg.norm(b))
    if res > rtol:
        # one step of iterative refinement before giving up
        x = x + lu.solve(b - A @ x)
        res = np.linalg.norm(A @ x - b) / (1.0 + np.linalg.norm(b))
        if res > rtol:
            raise SolverError(f"residual tolerance not met: {res:.3e} > {rtol:.1e}")
    log.debug("direct solve n=%d residual=%.2e", A.shape[0], res)
    return x


def apply_dirichlet(A: sp.csr_matrix, b: np.ndarray, dofs: np.ndarray, values: np.ndarray):
    """Replace rows ``dofs`` by identity rows and lift the columns.

    Returns a new (A, b): the remaining equations see the known values on
    the right-hand side, so the reduced operator keeps any symmetry.
    """
    dofs = np.asarray(dofs, dtype=np.int64)
    values = np.asarray(values, dtype=float)
    n = A.shape[0]
    x = np.zeros(n)
    x[dofs] = values
    b = b - A @ x
    keep = np.ones(n)
    keep[dofs] = 0.0
    D = sp.diags(keep)
    A = (D @ A @ D).tocsr()
    diag = np.zeros(n)
    diag[dofs] = 1.0
    A = (A + sp.diags(diag)).tocsr()
    A.eliminate_zeros()
    A.sort_indices()
    b[dofs] = values
    return A, b


def dump_matrix_market(A: sp.spmatrix, path) -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(A))
