"""Dense symmetric linear algebra: Cholesky solves, Jacobi eigendecomposition.

Symmetric matrices are plain ``float64`` ndarrays passed through :func:`as_sym`,
which symmetrizes them exactly via ``(A + A.T) / 2``.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NoConvergence, NotPositiveDefinite

PIVOT_RTOL = 1e-12
DEFAULT_MAX_SWEEPS = 100
# Above this size ``sym_eigen(method="auto")`` hands off to LAPACK.
JACOBI_AUTO_MAX_N = 256


def as_sym(a):
    """Return ``a`` as a float64 symmetric matrix, symmetrized by averaging."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] < 1:
        raise DimensionMismatch("matrix must be at least 1x1")
    return (a + a.T) / 2.0


@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns, orthonormal
    sweeps: int = 0

    def reconstruct(self):
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


def cholesky_factor(a):
    """Lower Cholesky factor of ``a`` with the pivot floor ``1e-12 * trace / n``.

    A pivot is the squared diagonal entry of the factor (the Schur complement
    diagonal at that elimination step).
    """
    a = as_sym(a)
    n = a.shape[0]
    floor = PIVOT_RTOL * abs(np.trace(a)) / n
    try:
        chol = scipy.linalg.cholesky(a, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"matrix is not positive definite: {exc}") from exc
    pivots = np.diag(chol) ** 2
    bad = np.flatnonzero(pivots <= floor)
    if bad.size:
        i = int(bad[0])
        raise NotPositiveDefinite(
            f"pivot {pivots[i]:.3e} at index {i} is below {floor:.3e}", pivot_index=i
        )
    return chol


def cholesky_solve(a, b):
    """Solve ``a x = b`` for symmetric positive definite ``a``."""
    b = np.asarray(b, dtype=np.float64)
    a = as_sym(a)
    if b.shape[0] != a.shape[0]:
        raise DimensionMismatch(f"rhs has length {b.shape[0]}, matrix is {a.shape[0]}x{a.shape[0]}")
    chol = cholesky_factor(a)
    return scipy.linalg.cho_solve((chol, True), b, check_finite=False)


def matvec(a, x):
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or x.ndim != 1 or a.shape[1] != x.shape[0]:
        raise DimensionMismatch(f"cannot multiply {a.shape} by {x.shape}")
    return a @ x


def _round_robin(n):
    """Tournament schedule: n - 1 rounds of n // 2 disjoint index pairs (n even)."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        rounds.append((np.minimum(p, q), np.maximum(p, q)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _rotate_rows(a, p, q, c, s):
    rp = a[p, :]
    rq = a[q, :]
    a[p, :] = c[:, None] * rp - s[:, None] * rq
    a[q, :] = s[:, None] * rp + c[:, None] * rq


def _off_norm(a):
    off = a.copy()
    np.fill_diagonal(off, 0.0)
    return np.linalg.norm(off)


def _jacobi(a, tol, max_sweeps):
    n = a.shape[0]
    a = a.copy()
    vt = np.eye(n)  # transposed eigenvector matrix, so updates stay row-wise
    if n == 1:
        return a.diagonal().copy(), vt, 0
    size = n + (n % 2)
    rounds = []
    for p, q in _round_robin(size):
        keep = q < n  # drop pairs involving the padding index
        rounds.append((p[keep], q[keep]))
    scale = np.linalg.norm(a)
    for sweep in range(max_sweeps + 1):
        if _off_norm(a) <= tol * scale:
            return a.diagonal().copy(), vt.T.copy(), sweep
        if sweep == max_sweeps:
            break
        for p, q in rounds:
            apq = a[p, q]
            if not np.any(apq):
                continue
            app = a[p, p]
            aqq = a[q, q]
            nz = apq != 0.0
            theta = (aqq - app) / (2.0 * np.where(nz, apq, 1.0))
            t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(1.0, theta))
            t = np.where(nz, t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            # J^T A J == J^T (J^T A)^T for symmetric A; pairs in a round are disjoint
            _rotate_rows(a, p, q, c, s)
            a = np.ascontiguousarray(a.T)
            _rotate_rows(a, p, q, c, s)
            a[p, q] = 0.0
            a[q, p] = 0.0
            a[p, p] = app - t * apq
            a[q, q] = aqq + t * apq
            _rotate_rows(vt, p, q, c, s)
    raise NoConvergence(f"Jacobi did not converge within {max_sweeps} sweeps")


def sym_eigen(a, tol=1e-12, max_sweeps=DEFAULT_MAX_SWEEPS, method="auto"):
    """Eigendecomposition of a symmetric matrix, eigenvalues sorted descending.

    ``method="jacobi"`` runs cyclic Jacobi with a round-robin pair ordering
    until the off-diagonal Frobenius mass is at most ``tol * ||a||_F``.
    ``method="lapack"`` uses ``numpy.linalg.eigh``; ``"auto"`` picks Jacobi for
    n <= JACOBI_AUTO_MAX_N.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    a = as_sym(a)
    n = a.shape[0]
    if method == "auto":
        method = "jacobi" if n <= JACOBI_AUTO_MAX_N else "lapack"
    if method == "jacobi":
        w, v, sweeps = _jacobi(a, tol, max_sweeps)
    elif method == "lapack":
        w, v = np.linalg.eigh(a)
        sweeps = 0
    else:
        raise ValueError(f"unknown method {method!r}")
    order = np.argsort(-w, kind="stable")
    return EigenDecomposition(eigenvalues=w[order], eigenvectors=v[:, order], sweeps=sweeps)


def sym_eigvals(a, **kwargs):
    return sym_eigen(a, **kwargs).eigenvalues
