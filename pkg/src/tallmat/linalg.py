"""Small dense linear algebra run on the control thread (p x p matrices)."""

from __future__ import annotations

import numpy as np

from .errors import ConvergenceError, ShapeError, SingularMatrixError


def _square(a, what):
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"{what}: expected a square matrix, got shape {a.shape}")
    return a


def jacobi_eigh(a, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(values, vectors)`` with values in descending order and the
    matching orthonormal eigenvectors as columns.  Sweeps stop once the
    off-diagonal Frobenius norm drops below ``tol`` times the matrix norm.
    """
    A = _square(a, "jacobi_eigh")
    n = A.shape[0]
    A = (A + A.T) / 2.0
    V = np.eye(n)
    scale = np.linalg.norm(A) or 1.0
    offdiag = ~np.eye(n, dtype=bool)
    for sweep in range(max_sweeps + 1):
        off = np.sqrt(np.sum(A[offdiag] ** 2))
        if off <= tol * scale:
            break
        if sweep == max_sweeps:
            raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps (off-diagonal {off:.3e})")
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                diff = A[q, q] - A[p, p]
                if abs(diff) > 1e150 * abs(apq):
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap, aq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
                A[p, q] = A[q, p] = 0.0
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]


def gauss_jordan_inverse(a, rel_tol: float = 1e-12) -> np.ndarray:
    """Inverse by Gauss-Jordan elimination with partial pivoting.

    Raises :class:`SingularMatrixError` when a pivot falls below
    ``rel_tol`` times the infinity norm of ``a``.
    """
    A = _square(a, "gauss_jordan_inverse")
    n = A.shape[0]
    norm = np.max(np.sum(np.abs(A), axis=1)) if n else 0.0
    M = np.hstack([A, np.eye(n)])
    for col in range(n):
        piv = col + int(np.argmax(np.abs(M[col:, col])))
        if abs(M[piv, col]) < rel_tol * norm or norm == 0.0:
            raise SingularMatrixError(
                f"singular matrix: pivot {abs(M[piv, col]):.3e} in column {col} below {rel_tol:g} * {norm:.3e}"
            )
        if piv != col:
            M[[col, piv]] = M[[piv, col]]
        M[col] /= M[col, col]
        for r in range(n):
            if r != col and M[r, col] != 0.0:
                M[r] -= M[r, col] * M[col]
    return M[:, n:]
