"""Comparison controllers: two-point zeroth-order policy optimization and
nominal unconstrained receding-horizon control."""

import logging
from dataclasses import dataclass

import numpy as np

from .lqr import lqr_cost
from .mathkit import solve_dare, spectral_radius

log = logging.getLogger(__name__)

MAX_REDRAWS = 100


@dataclass(frozen=True)
class ZopoConfig:
    """Two-point estimator settings.

    One update consumes ``2 * n_dir * rollout_len`` samples.
    """
    radius: float = 0.05
    rollout_len: int = 150
    n_dir: int = 10
    stepsize: float = 1e-3
    divergence_cap: float = 1e9

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.rollout_len < 1 or self.n_dir < 1:
            raise ValueError("rollout_len and n_dir must be at least 1")

    @property
    def samples_per_update(self):
        return 2 * self.n_dir * self.rollout_len


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 20

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")


def _noise_factor(U_eps):
    """Square-root factor ``L`` with ``L L' = U_eps`` (PSD safe)."""
    w, V = np.linalg.eigh(0.5 * (U_eps + U_eps.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


def rollout_cost(A, B, K, weights, eps, cap=1e9):
    """Empirical average stage cost of ``x+ = (A+BK)x + eps_k`` from ``x = 0``.

    ``eps`` has shape (l, n). Returns ``inf`` if the state exceeds ``cap``
    or the closed loop is not Schur stable.
    """
    A_cl = A + B @ K
    if spectral_radius(A_cl) >= 1.0:
        return np.inf
    S = weights.stage(K)
    x = np.zeros(A.shape[0])
    total = 0.0
    for e in eps:
        x = A_cl @ x + e
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > cap:
            return np.inf
        total += x @ S @ x
    return total / len(eps)


def zopo_gradient(K, A, B, U_eps, weights, cfg, rng, stats=None):
    """Two-point smoothed gradient estimate of the LQR cost at ``K``.

    Each pair uses a direction uniform on the unit Frobenius sphere and
    common random numbers for both rollouts. Pairs with a destabilized
    endpoint are redrawn.
    """
    K = np.asarray(K, dtype=float)
    m, n = K.shape
    d = m * n
    L = _noise_factor(U_eps)
    g = np.zeros_like(K)
    redraws = 0
    for _ in range(cfg.n_dir):
        for _attempt in range(MAX_REDRAWS):
            U = rng.standard_normal((m, n))
            U /= np.linalg.norm(U)
            eps = rng.standard_normal((cfg.rollout_len, n)) @ L.T
            c_plus = rollout_cost(A, B, K + cfg.radius * U, weights, eps, cfg.divergence_cap)
            c_minus = rollout_cost(A, B, K - cfg.radius * U, weights, eps, cfg.divergence_cap)
            if np.isfinite(c_plus) and np.isfinite(c_minus):
                break
            redraws += 1
        else:
            raise RuntimeError("could not draw a stabilizing perturbation pair")
        g += (c_plus - c_minus) * U
    if redraws:
        log.info("zopo: %d destabilized pairs redrawn", redraws)
    if stats is not None:
        stats['redraws'] = stats.get('redraws', 0) + redraws
    return (d / (2.0 * cfg.radius)) * g / cfg.n_dir


def zopo_run(A, B, U_eps, K0, weights, cfg, budget_samples, rng):
    """Iterate ZO-PO until the sample budget is spent.

    Returns a list of ``(samples_used, C(K))`` pairs starting with the
    initial gain. Steps that would destabilize the plant are skipped.
    """
    K = np.asarray(K0, dtype=float).copy()
    trace = [(0, lqr_cost(A, B, K, weights, U_eps, check_duality=False))]
    used = 0
    per = cfg.samples_per_update
    while used + per <= budget_samples:
        g = zopo_gradient(K, A, B, U_eps, weights, cfg, rng)
        used += per
        K_new = K - cfg.stepsize * g
        if spectral_radius(A + B @ K_new) < 1.0:
            K = K_new
        else:
            log.info("zopo: destabilizing step skipped at %d samples", used)
        trace.append((used, lqr_cost(A, B, K, weights, U_eps, check_duality=False)))
    return K, trace


def mpc_gain(A_nom, B_nom, weights, cfg, P_terminal=None):
    """First-step gain of the unconstrained finite-horizon problem.

    The backward Riccati recursion starts from the nominal DARE solution
    unless ``P_terminal`` is given.
    """
    Q, R = weights.Q, weights.R
    P = solve_dare(A_nom, B_nom, Q, R)[0] if P_terminal is None else np.asarray(P_terminal, float)
    K = None
    for _ in range(cfg.horizon):
        BtP = B_nom.T @ P
        K = -np.linalg.solve(R + BtP @ B_nom, BtP @ A_nom)
        A_cl = A_nom + B_nom @ K
        P = Q + K.T @ R @ K + A_cl.T @ P @ A_cl
        P = 0.5 * (P + P.T)
    return K
