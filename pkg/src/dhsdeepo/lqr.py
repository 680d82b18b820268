"""Exact LQR costs, model-based LQR and the certainty-equivalence pipeline."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NotSchurStable, RankDeficientData
from .mathkit import solve_dare, solve_dlyap_ctrl, solve_dlyap_obsv

DUALITY_RTOL = 1e-8
PHI_MAX_COND = 1e12


@dataclass(frozen=True)
class LqrWeights:
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        for name in ('Q', 'R'):
            M = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if not np.allclose(M, M.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(M).min() <= 0:
                raise ValueError(f"{name} must be positive definite")
            object.__setattr__(self, name, M)

    @classmethod
    def identity(cls, n, m):
        return cls(np.eye(n), np.eye(m))

    def stage(self, K):
        return self.Q + K.T @ self.R @ K


@dataclass(frozen=True)
class DataBatch:
    """Column-stacked trajectory data ``X1 = A X0 + B U0 + W0``."""
    X0: np.ndarray
    U0: np.ndarray
    X1: np.ndarray
    W0: Optional[np.ndarray] = None

    def __post_init__(self):
        t = self.X0.shape[1]
        if self.U0.shape[1] != t or self.X1.shape[1] != t:
            raise ValueError("X0, U0 and X1 must have the same number of columns")
        if self.X0.shape[0] != self.X1.shape[0]:
            raise ValueError("X0 and X1 must have the same number of rows")

    @property
    def t(self):
        return self.X0.shape[1]

    @property
    def D0(self):
        return np.vstack([self.U0, self.X0])


def stationary_cov(A, B, K, U_eps):
    """Stationary state covariance of ``x+ = (A + BK) x + eps``."""
    return solve_dlyap_ctrl(A + B @ K, U_eps)


def cost_matrix(A, B, K, weights):
    """``P_K`` solving ``P = Q + K'RK + (A+BK)' P (A+BK)``."""
    return solve_dlyap_obsv(A + B @ K, weights.stage(K))


def lqr_cost(A, B, K, weights, U_eps, check_duality=True):
    """H2 cost ``Tr((Q + K'RK) U_K)``; ``inf`` if ``K`` does not stabilize.

    With ``check_duality`` the value is cross-checked against
    ``Tr(P_K U_eps)``.
    """
    try:
        U_K = stationary_cov(A, B, K, U_eps)
    except NotSchurStable:
        return np.inf
    c = float(np.trace(weights.stage(K) @ U_K))
    if check_duality:
        c_dual = float(np.trace(cost_matrix(A, B, K, weights) @ U_eps))
        if abs(c - c_dual) > DUALITY_RTOL * max(abs(c), 1.0):
            raise ArithmeticError(f"cost forms disagree: {c!r} vs {c_dual!r}")
    return c


def policy_gradient(A, B, K, weights, U_eps):
    """Exact gradient of ``C(K)``: ``2((R + B'PB) K + B'PA) U_K``."""
    P = cost_matrix(A, B, K, weights)
    U_K = stationary_cov(A, B, K, U_eps)
    return 2.0 * ((weights.R + B.T @ P @ B) @ K + B.T @ P @ A) @ U_K


def model_lqr(A, B, weights, U_eps=None):
    """Optimal gain, Riccati solution and optimal cost for a known model."""
    P, K = solve_dare(A, B, weights.Q, weights.R)
    U_eps = np.eye(A.shape[0]) if U_eps is None else U_eps
    return K, P, float(np.trace(P @ U_eps))


def ls_identify(batch):
    """Least-squares estimate ``[B_hat, A_hat] = X1bar Phi^{-1}``."""
    n, t = batch.X0.shape
    m = batch.U0.shape[0]
    if t < n + m:
        raise RankDeficientData(f"need at least n+m={n + m} samples, got {t}")
    D0 = batch.D0
    Phi = D0 @ D0.T / t
    cond = np.linalg.cond(Phi)
    if not np.isfinite(cond) or cond > PHI_MAX_COND:
        raise RankDeficientData(f"data covariance is ill conditioned (cond={cond:.3e})", cond)
    X1bar = batch.X1 @ D0.T / t
    BA = np.linalg.solve(Phi.T, X1bar.T).T
    return BA[:, m:], BA[:, :m], Phi


def residual_cov(batch, A_hat, B_hat, K0):
    """Sample covariance of the one-step residual under the data gain ``K0``."""
    eps = batch.X1 - (A_hat + B_hat @ K0) @ batch.X0
    return eps @ eps.T / batch.t


def ce_lqr(A_hat, B_hat, weights):
    """Certainty-equivalence gain (Riccati on the estimated pair)."""
    _, K = solve_dare(A_hat, B_hat, weights.Q, weights.R)
    return K
