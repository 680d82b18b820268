"""Dense matrix kernels: Lyapunov and Riccati solvers, rank and excitation checks.

All routines take plain ``numpy`` arrays and never mutate their inputs.
"""

import numpy as np
import scipy.linalg

from .constants import TOL
from .errors import (InsufficientData, NonFinite, NonSymmetricInput,
                     NotSchurStable, NotStabilizable)

__all__ = ['solve_dlyap_obsv', 'solve_dlyap_ctrl', 'solve_dare', 'pinv',
           'spectral_radius', 'kalman_rank', 'hankel_matrix', 'hankel_min_sv']


def _as_finite(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.all(np.isfinite(M)):
        raise NonFinite(f"{name} contains NaN or Inf")
    return M


def spectral_radius(M):
    """Largest eigenvalue modulus of a square matrix."""
    M = _as_finite(M, 'M')
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def _check_stein_inputs(A, M, check_stable=True):
    A = _as_finite(A, 'A_cl')
    M = _as_finite(M, 'M')
    n = A.shape[0]
    if A.shape != (n, n) or M.shape != (n, n):
        raise ValueError(f"shape mismatch: A {A.shape}, M {M.shape}")
    asym = np.linalg.norm(M - M.T)
    if asym > TOL.symmetry * max(np.linalg.norm(M), 1.0):
        raise NonSymmetricInput(f"||M - M^T||_F = {asym:.3e}")
    if check_stable:
        rho = spectral_radius(A)
        if rho >= 1.0 - TOL.schur_margin:
            raise NotSchurStable(f"spectral radius {rho:.12f} >= 1")
    return A, M


def _stein(A, M):
    # X = M + A X A^T
    n = A.shape[0]
    if n <= TOL.kron_max_n:
        lhs = np.eye(n * n) - np.kron(A, A)
        X = np.linalg.solve(lhs, M.reshape(-1)).reshape(n, n)
    else:
        X = scipy.linalg.solve_discrete_lyapunov(A, M)
    return 0.5 * (X + X.T)


def solve_dlyap_obsv(A_cl, M, check_stable=True):
    """Solve ``P = M + A_cl^T P A_cl`` for a Schur-stable ``A_cl``.

    ``check_stable=False`` skips the eigenvalue test when the caller has
    already verified stability.

    Raises
    ------
    NotSchurStable
        If ``rho(A_cl) >= 1``.
    NonSymmetricInput
        If ``M`` is not symmetric.
    """
    A, M = _check_stein_inputs(A_cl, M, check_stable)
    return _stein(A.T, 0.5 * (M + M.T))


def solve_dlyap_ctrl(A_cl, M, check_stable=True):
    """Solve ``U = M + A_cl U A_cl^T`` (stationary covariance orientation)."""
    A, M = _check_stein_inputs(A_cl, M, check_stable)
    return _stein(A, 0.5 * (M + M.T))


def _riccati_map(A, B, Q, R, P):
    BtPA = B.T @ P @ A
    return Q + A.T @ P @ A - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA)


def riccati_residual(A, B, Q, R, P):
    return float(np.linalg.norm(P - _riccati_map(A, B, Q, R, P)))


def solve_dare(A, B, Q, R, max_iter=None, rel_tol=None):
    """Stabilizing solution of the discrete algebraic Riccati equation.

    Value iteration ``P <- Q + A'PA - A'PB (R + B'PB)^{-1} B'PA`` started
    from ``P = Q`` and stopped on relative change.

    Returns
    -------
    P : ndarray, shape (n, n)
    K : ndarray, shape (m, n)
        Optimal gain for ``u = K x``, i.e. ``K = -(R + B'PB)^{-1} B'PA``.
    """
    A = _as_finite(A, 'A')
    B = _as_finite(B, 'B')
    Q = _as_finite(Q, 'Q')
    R = _as_finite(R, 'R')
    max_iter = TOL.dare_max_iter if max_iter is None else max_iter
    rel_tol = TOL.dare_rel_change if rel_tol is None else rel_tol

    P = Q.copy()
    for _ in range(max_iter):
        P_next = _riccati_map(A, B, Q, R, P)
        P_next = 0.5 * (P_next + P_next.T)
        scale = np.linalg.norm(P_next)
        if not np.isfinite(scale) or scale > TOL.dare_max_norm:
            raise NotStabilizable(f"value iteration diverged (||P|| = {scale:.3e})")
        change = np.linalg.norm(P_next - P)
        P = P_next
        if change <= rel_tol * scale:
            break
    else:
        raise NotStabilizable(f"value iteration did not converge in {max_iter} iterations")

    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    if spectral_radius(A + B @ K) >= 1.0:
        raise NotStabilizable("Riccati gain does not stabilize (A, B)")
    return P, K


def pinv(M):
    """Moore-Penrose pseudoinverse (SVD based)."""
    return np.linalg.pinv(_as_finite(M, 'M'))


def kalman_rank(A, B, rel_tol=None):
    """Rank of the controllability matrix ``[B, AB, ..., A^{n-1} B]``."""
    A = _as_finite(A, 'A')
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    rel_tol = TOL.kalman_rank_rel if rel_tol is None else rel_tol
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    ctrb = np.hstack(blocks)
    if ctrb.size == 0:
        return 0
    s = np.linalg.svd(ctrb, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def hankel_matrix(u_seq, depth):
    """Block Hankel matrix of depth ``depth`` from a sequence of m-vectors.

    ``u_seq`` may be a list of vectors or an array of shape (t, m).
    """
    U = np.asarray(u_seq, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    U = U.reshape(U.shape[0], -1)
    t, m = U.shape
    if depth < 1 or t < depth:
        raise InsufficientData(f"need at least {depth} samples, got {t}")
    cols = t - depth + 1
    H = np.empty((depth * m, cols))
    for i in range(depth):
        H[i * m:(i + 1) * m, :] = U[i:i + cols].T
    return H


def hankel_min_sv(u_seq, depth):
    """Smallest singular value of the depth-``depth`` block Hankel matrix.

    Divide by ``sqrt(t * depth)`` to get the empirical excitation level.
    When the Hankel matrix has fewer columns than rows its rank is
    deficient and 0 is returned.
    """
    H = hankel_matrix(u_seq, depth)
    if H.shape[1] < H.shape[0]:
        return 0.0
    return float(np.linalg.svd(H, compute_uv=False)[-1])
