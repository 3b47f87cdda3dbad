"""Dense linear-algebra kernel: vec/Kronecker identities, symmetric
eigendecompositions, pseudo-inverses and equality-constrained saddle solves.

Everything here is stateless and operates on plain ``numpy`` arrays.  All
solvers are dense; problem sizes in this package stay well below ~10^3
variables, so direct factorizations are both fastest and most robust.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleConstraints, NotSymmetric

# Single documented default for pseudo-inverse truncation and rank decisions:
# singular values below DEFAULT_RTOL * sigma_max are treated as zero.
DEFAULT_RTOL = 1e-10


def vec(m: np.ndarray) -> np.ndarray:
    """Stack the columns of a matrix into one vector."""
    return np.asarray(m).reshape(-1, order="F")


def unvec(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Inverse of :func:`vec` for a ``rows x cols`` matrix."""
    return np.asarray(v).reshape(rows, cols, order="F")


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product; satisfies tr(X^T A1 X A2) = vec(X)^T (A2 kron A1) vec(X)."""
    return np.kron(np.asarray(a), np.asarray(b))


def pinv(a: np.ndarray, rel_tol: float = DEFAULT_RTOL) -> np.ndarray:
    """Moore-Penrose pseudo-inverse with relative singular-value truncation."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return a.T.copy()
    return np.linalg.pinv(a, rcond=rel_tol)


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Average a matrix with its transpose (cheap symmetry cleanup)."""
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class SymEig:
    """Eigendecomposition of a symmetric matrix, eigenvalues sorted descending.

    Ties keep the stable order produced by the underlying ascending
    factorization, so repeated eigenvalues have a deterministic basis.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # orthonormal columns, eigenvectors[:, k] <-> eigenvalues[k]


def sym_eig(a: np.ndarray, sym_tol: float = 1e-12) -> SymEig:
    """Full eigendecomposition of a symmetric matrix, descending order.

    Raises
    ------
    NotSymmetric
        If ``a`` deviates from its transpose by more than ``sym_tol``
        relative to its largest entry.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[0] != a.shape[1]:
        raise NotSymmetric(f"matrix is {a.shape[0]}x{a.shape[1]}, not square")
    scale = max(1.0, float(np.abs(a).max()) if a.size else 1.0)
    if a.size and float(np.abs(a - a.T).max()) > sym_tol * scale:
        raise NotSymmetric("matrix is not symmetric within tolerance")
    w, v = np.linalg.eigh(symmetrize(a))
    # eigh returns ascending order; reversing keeps ties in a stable order.
    return SymEig(eigenvalues=w[::-1].copy(), eigenvectors=v[:, ::-1].copy())


def is_psd(a: np.ndarray, tol: float = 1e-10) -> bool:
    """Check positive semi-definiteness up to an absolute eigenvalue slack."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return True
    w = np.linalg.eigvalsh(symmetrize(a))
    scale = max(1.0, float(w[-1]))
    return bool(w[0] >= -tol * scale)


def solve_kkt(
    p_mat: np.ndarray,
    p_vec: np.ndarray,
    phi: np.ndarray,
    phi_rhs: np.ndarray,
    feas_tol: float = 1e-8,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve min t^T P t + p^T t subject to Phi t = phi via its saddle system.

    The stationarity/feasibility conditions form the linear system

        [2P  Phi^T] [t     ]   [-p  ]
        [Phi  0   ] [lambda] = [ phi]

    which has one solution when P is nonsingular on the feasible subspace and
    infinitely many of equal objective value otherwise; in the singular case
    the minimum-norm solution is returned.

    Returns
    -------
    (t, lambda) : primal solution and equality multipliers.

    Raises
    ------
    InfeasibleConstraints
        If no t satisfies Phi t = phi to ``feas_tol`` (relative).
    """
    p_mat = np.atleast_2d(np.asarray(p_mat, dtype=float))
    p_vec = np.asarray(p_vec, dtype=float).ravel()
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    phi_rhs = np.asarray(phi_rhs, dtype=float).ravel()
    n = p_vec.size
    m = phi_rhs.size
    if phi.size == 0:
        phi = np.zeros((0, n))
    if phi.shape != (m, n):
        raise InfeasibleConstraints(
            f"constraint matrix is {phi.shape}, expected ({m}, {n})"
        )

    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = 2.0 * p_mat
    kkt[:n, n:] = phi.T
    kkt[n:, :n] = phi
    rhs = np.concatenate([-p_vec, phi_rhs])

    try:
        sol = np.linalg.solve(kkt, rhs)
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs, rcond=DEFAULT_RTOL)[0]

    t, lam = sol[:n], sol[n:]
    if m:
        resid = float(np.linalg.norm(phi @ t - phi_rhs))
        scale = 1.0 + float(np.linalg.norm(phi_rhs))
        if resid > feas_tol * scale:
            raise InfeasibleConstraints(
                f"equality constraints inconsistent (residual {resid:.3e})"
            )
    return t, lam
