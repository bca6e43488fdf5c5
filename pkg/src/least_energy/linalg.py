"""Sparse symmetric operators, solves and eigensolves on P1 meshes (scipy-backed).

Operators are ``scipy.sparse.csr_matrix`` instances in canonical form
(sorted indices, no duplicates, explicit zeros removed). Dirichlet conditions
are imposed by restricting to interior vertices.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels

SparseOperator = sp.csr_matrix


class LinalgError(RuntimeError):
    """Base class for failures in this module."""


class DegenerateTriangleError(LinalgError):
    pass


class ConvergenceError(LinalgError):
    """Iterative solve did not reach its tolerance; ``residual`` holds the last value."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


def _canonical(A):
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def _local(mesh):
    key = "p1_local"
    if key not in mesh._cache:
        areas, local = kernels.p1_local(mesh.vertices, mesh.triangles)
        e = mesh.edge_lengths()
        h = float(e.max()) if e.size else 1.0
        hmin = mesh.triangle_diameters()
        bad = np.nonzero(np.abs(areas) < 1e-14 * hmin ** 2)[0]
        if bad.size:
            t = int(bad[0])
            raise DegenerateTriangleError(
                f"triangle {t} {mesh.triangles[t].tolist()} is degenerate "
                f"(area {areas[t]:.3g}, h_max {h:.3g})")
        mesh._cache[key] = (areas, local)
    return mesh._cache[key]


def assemble_stiffness(mesh):
    """P1 stiffness ∫∇φ_i·∇φ_j over all vertices (no boundary elimination)."""
    _, local = _local(mesh)
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    return _canonical(sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)))


def assemble_mass(mesh, lumped=True):
    """P1 mass ∫φ_iφ_j, or its row-sum lumped diagonal."""
    areas, _ = _local(mesh)
    a = np.abs(areas)
    t = mesh.triangles
    n = mesh.n_vertices
    if lumped:
        d = np.bincount(t.ravel(), weights=np.repeat(a / 3.0, 3), minlength=n)
        return sp.diags(d, format="csr")
    base = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    vals = a[:, None, None] * base[None]
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    return _canonical(sp.coo_matrix((vals.ravel(), (rows, cols)), shape=(n, n)))


def lumped_weights(mesh):
    """Diagonal of the lumped mass matrix."""
    return assemble_mass(mesh, lumped=True).diagonal()


def restrict(A, idx):
    """Principal submatrix on ``idx`` (Dirichlet elimination)."""
    return _canonical(A[idx][:, idx])


def is_symmetric(A, rtol=1e-14):
    D = (A - A.T).tocsr()
    scale = abs(A).max() if A.nnz else 1.0
    return (abs(D).max() if D.nnz else 0.0) <= rtol * scale


def solve_spd(A, b, tol=1e-10, maxiter=None, x0=None):
    """Conjugate gradients with Jacobi preconditioning.

    The iteration cap defaults to 50·sqrt(n). Raises ConvergenceError with the
    last relative residual when the cap is hit.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if maxiter is None:
        maxiter = max(50, int(50 * math.sqrt(n)))
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros(n)
    d = A.diagonal()
    if np.any(d <= 0):
        raise LinalgError("operator has a nonpositive diagonal entry; not SPD")
    M = spla.LinearOperator(A.shape, matvec=lambda x: x / d, dtype=float)
    used = 0
    x = x0
    res = math.inf
    # CG stops on the preconditioned residual; restart until the true one meets tol
    while used < maxiter:
        count = [0]
        x, info = spla.cg(A, b, x0=x, rtol=tol, atol=0.0, maxiter=maxiter - used, M=M,
                          callback=lambda _xk: count.__setitem__(0, count[0] + 1))
        used += count[0]
        last, res = res, np.linalg.norm(A @ x - b) / nb
        if not np.isfinite(res) or res <= tol or info != 0 or res >= 0.5 * last:
            break
    if not np.isfinite(res) or res > tol:
        raise ConvergenceError(
            f"CG stopped after {used} iterations with relative residual {res:.3e}", res)
    return x


class Factorized:
    """Sparse LU of a (possibly indefinite) operator, reused for many solves."""

    def __init__(self, A):
        self.A = sp.csc_matrix(A)
        self._lu = spla.splu(self.A)

    def __call__(self, b):
        return self._lu.solve(np.asarray(b, dtype=float))


@dataclass(frozen=True)
class EigenPair:
    """Generalized eigenpair A v = value·B v with ‖v‖_B = 1."""

    value: float
    vector: np.ndarray
    residual: float


def smallest_eigenpairs(A, B, k, tol=1e-8, sigma=None):
    """The ``k`` eigenpairs of A v = λ B v with smallest λ (or nearest ``sigma``).

    Shift-and-invert Lanczos. Without ``sigma`` the shift is a lower bound
    from a Gershgorin estimate so the smallest eigenvalues are the targets.
    """
    A = sp.csr_matrix(A)
    B = sp.csr_matrix(B)
    n = A.shape[0]
    if k >= n:
        raise LinalgError(f"requested {k} eigenpairs of a dimension-{n} problem")
    if sigma is None:
        sigma = _lower_bound(A, B)
    # fixed start vector so repeated runs agree bit for bit
    v0 = 1.0 + 0.5 * np.sin(np.arange(n) * 0.7548776662466927)
    vals, vecs = spla.eigsh(A, k=k, M=B, sigma=sigma, which="LM", tol=tol * 1e-2, v0=v0)
    order = np.argsort(vals)
    out = []
    for i in order:
        v = vecs[:, i]
        v = v / math.sqrt(v @ (B @ v))
        r = np.linalg.norm(A @ v - vals[i] * (B @ v)) / max(np.linalg.norm(v), 1e-300)
        out.append(EigenPair(float(vals[i]), v, float(r)))
    return out


def _lower_bound(A, B):
    # Gershgorin on B^{-1/2} A B^{-1/2} is awkward for consistent B; a cheap safe
    # choice is min over rows of (a_ii - Σ|a_ij|)/b_ii scaled by the smallest B eigen ratio.
    d = A.diagonal()
    off = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(d)
    bd = B.diagonal()
    low = float(np.min((d - off) / bd))
    return min(low, 0.0) - 1.0


def write_coo(A, path):
    """Debug dump in coordinate text format ``i j value``."""
    C = sp.coo_matrix(A)
    order = np.lexsort((C.col, C.row))
    with open(path, "w") as fh:
        for i, j, v in zip(C.row[order], C.col[order], C.data[order]):
            fh.write(f"{i} {j} {v:.17g}\n")


def negative_inertia(A):
    """Number of negative eigenvalues of a symmetric sparse A (Sylvester's law).

    Uses an LU factorization with symmetric ordering and no row pivoting, so
    the factors form an LDLᵀ and the signs of U's diagonal give the inertia.
    Raises LinalgError when the factorization had to pivot off the diagonal.
    """
    A = sp.csc_matrix(A)
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise LinalgError(f"symmetric factorization failed: {exc}") from exc
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise LinalgError("factorization pivoted off the diagonal; inertia unavailable")
    d = lu.U.diagonal()
    if np.any(d == 0):
        raise LinalgError("singular matrix: zero pivot")
    return int(np.sum(d < 0))
