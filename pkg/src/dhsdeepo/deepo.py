"""Covariance-parameterized policy optimization from closed-loop data.

A gain ``K`` is represented by the lifted matrix ``V = Phi^{-1} [K; I]``
where ``Phi`` is the sample covariance of ``d_k = [u_k; x_k]``. The
data-based closed loop is ``Xbar1 V`` and the policy is updated by
projected gradient steps (plain or ADAM-preconditioned) on the surrogate
cost ``J(V)``. Sample covariances are refreshed by rank-1 updates with a
Sherman-Morrison inverse.
"""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg

from .constants import TOL
from .errors import Infeasible, NotSchurStable, RankDeficient, RankDeficientData, StepRejected
from .mathkit import solve_dlyap_ctrl, solve_dlyap_obsv, spectral_radius

PHI_MAX_COND = 1e14
MAX_HALVINGS = 30


@dataclass(frozen=True)
class CovBuffers:
    """Running sample moments of the data ``(u_k, x_k, x_{k+1})``.

    Only ``Phi``, its inverse, ``Xbar1`` and ``S11`` are stored; the other
    moments are sub-blocks of these.
    """
    t: int
    m: int
    Phi: np.ndarray
    Phi_inv: np.ndarray
    Xbar1: np.ndarray
    S11: np.ndarray

    @property
    def n(self):
        return self.Xbar1.shape[0]

    @property
    def Ubar0(self):
        return self.Phi[:self.m, :]

    @property
    def Xbar0(self):
        return self.Phi[self.m:, :]

    @property
    def S00(self):
        # X0 X0' / t
        return self.Phi[self.m:, self.m:]

    @property
    def S01(self):
        # X0 X1' / t
        return self.Xbar1[:, self.m:].T

    def sigma_min(self):
        return float(np.linalg.eigvalsh(self.Phi)[0])

    def inverse_drift(self, relative=False):
        """Frobenius distance between the recursive and a direct inverse."""
        direct = np.linalg.inv(self.Phi)
        d = float(np.linalg.norm(self.Phi_inv - direct))
        return d / float(np.linalg.norm(direct)) if relative else d

    def resync(self):
        return replace(self, Phi_inv=np.linalg.inv(self.Phi))


def buffers_from_batch(batch):
    t = batch.t
    m = batch.U0.shape[0]
    n = batch.X0.shape[0]
    if t < n + m:
        raise RankDeficientData(f"need at least n+m={n + m} samples, got {t}")
    D0 = batch.D0
    Phi = D0 @ D0.T / t
    cond = np.linalg.cond(Phi)
    if not np.isfinite(cond) or cond > PHI_MAX_COND:
        raise RankDeficientData(f"warm-start covariance is ill conditioned (cond={cond:.3e})", cond)
    Phi = 0.5 * (Phi + Phi.T)
    return CovBuffers(t, m, Phi, np.linalg.inv(Phi), batch.X1 @ D0.T / t,
                      batch.X1 @ batch.X1.T / t)


def rank1_update(buf, u, x, x_next):
    """Fold one sample into the running moments.

    Every moment ``M`` becomes ``t/(t+1) M + 1/(t+1) (new outer product)``
    and ``Phi^{-1}`` follows by Sherman-Morrison.
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    x = np.asarray(x, dtype=float).reshape(-1)
    x_next = np.asarray(x_next, dtype=float).reshape(-1)
    t = buf.t
    phi = np.concatenate([u, x])
    a, b = t / (t + 1.0), 1.0 / (t + 1.0)

    Pphi = buf.Phi_inv @ phi
    denom = t + phi @ Pphi
    Phi_inv = ((t + 1.0) / t) * (buf.Phi_inv - np.outer(Pphi, Pphi) / denom)

    return CovBuffers(
        t + 1, buf.m,
        a * buf.Phi + b * np.outer(phi, phi),
        0.5 * (Phi_inv + Phi_inv.T),
        a * buf.Xbar1 + b * np.outer(x_next, phi),
        a * buf.S11 + b * np.outer(x_next, x_next),
    )


def lift(buf, K):
    """``V = Phi^{-1} [K; I]``."""
    return buf.Phi_inv @ np.vstack([K, np.eye(buf.n)])


def recover_gain(buf, V):
    return buf.Ubar0 @ V


def noise_cov_estimate(buf, V):
    """Residual covariance ``(1/t) (X1 - Xbar1 V X0)(X1 - Xbar1 V X0)'``
    evaluated from running moments."""
    M = buf.Xbar1 @ V
    S01 = buf.S01
    U = buf.S11 - M @ S01 - S01.T @ M.T + M @ buf.S00 @ M.T
    return 0.5 * (U + U.T)


def gram_factor(Xbar0):
    """Cholesky factor of ``Xbar0 Xbar0'``; raises if ``Xbar0`` is row rank deficient."""
    G = Xbar0 @ Xbar0.T
    try:
        c, low = scipy.linalg.cho_factor(G, check_finite=True)
    except (np.linalg.LinAlgError, ValueError):
        raise RankDeficient("Xbar0 does not have full row rank (Gram not positive definite)")
    d = np.abs(np.diag(c))
    cond = (d.max() / d.min()) ** 2 if d.min() > 0 else np.inf
    if not np.isfinite(cond) or cond > 1e16:
        raise RankDeficient(f"Xbar0 does not have full row rank (cond >= {cond:.3e})")
    return c, low


def _gram_solve(Xbar0, rhs, factor=None):
    factor = gram_factor(Xbar0) if factor is None else factor
    return scipy.linalg.cho_solve(factor, rhs)


def project_tangent(G, Xbar0, factor=None):
    """Orthogonal projection of ``G`` onto ``{D : Xbar0 D = 0}``.

    ``factor`` is an optional precomputed :func:`gram_factor`.
    """
    return G - Xbar0.T @ _gram_solve(Xbar0, Xbar0 @ G, factor)


def affine_project(V_tilde, Xbar0, factor=None):
    """Nearest (Frobenius) point to ``V_tilde`` with ``Xbar0 V = I``."""
    n = Xbar0.shape[0]
    return V_tilde + Xbar0.T @ _gram_solve(Xbar0, np.eye(n) - Xbar0 @ V_tilde, factor)


@dataclass(frozen=True)
class SurrogateEval:
    J: float
    J_dual: float
    grad: np.ndarray
    U_K: np.ndarray
    P_V: np.ndarray
    rho: float


def evaluate(buf, V, weights, U_eps_hat):
    """Surrogate cost, its gradient and the two Lyapunov solutions at ``V``."""
    M = buf.Xbar1 @ V
    K = buf.Ubar0 @ V
    rho = spectral_radius(M)
    if rho >= 1.0:
        raise Infeasible(f"rho(Xbar1 V) = {rho:.6f} >= 1")
    stage = weights.stage(K)
    try:
        U_K = solve_dlyap_ctrl(M, U_eps_hat, check_stable=False)
        P_V = solve_dlyap_obsv(M, stage, check_stable=False)
    except NotSchurStable as exc:
        raise Infeasible(str(exc)) from exc
    UR = buf.Ubar0.T @ weights.R @ buf.Ubar0
    grad = 2.0 * (UR + buf.Xbar1.T @ P_V @ buf.Xbar1) @ V @ U_K
    return SurrogateEval(float(np.trace(stage @ U_K)), float(np.trace(P_V @ U_eps_hat)),
                         grad, U_K, P_V, rho)


def surrogate_cost(buf, V, weights, U_eps_hat):
    """``J(V) = Tr((Q + V' Ubar0' R Ubar0 V) U_K)``."""
    return evaluate(buf, V, weights, U_eps_hat).J


def gradient(buf, V, weights, U_eps_hat):
    """``grad J = 2 (Ubar0' R Ubar0 + Xbar1' P_V Xbar1) V U_K``."""
    return evaluate(buf, V, weights, U_eps_hat).grad


@dataclass(frozen=True)
class AdamHyper:
    eta0: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    decay: bool = True

    def eta(self, k):
        """Stepsize at ADAM step ``k`` (1-based)."""
        return self.eta0 / np.sqrt(k) if self.decay else self.eta0


@dataclass(frozen=True)
class PolicyState:
    K: np.ndarray
    V: np.ndarray
    adam_m: Optional[np.ndarray] = None
    adam_v: Optional[np.ndarray] = None
    step: int = 0
    grad_max: float = 0.0


@dataclass
class StepInfo:
    J: float = np.nan
    grad_norm: float = np.nan
    eta: float = np.nan
    halvings: int = 0
    rho: float = np.nan
    rho_next: float = np.nan
    U_eps_hat: Optional[np.ndarray] = field(default=None, repr=False)
    d_inv_min: float = np.nan
    d_inv_max: float = np.nan


def warm_start(batch, K0):
    buf = buffers_from_batch(batch)
    K0 = np.asarray(K0, dtype=float)
    return buf, PolicyState(K0.copy(), lift(buf, K0))


def _noise_cov(buf, V, ueps_mode):
    if ueps_mode == 'identity':
        return np.eye(buf.n)
    if ueps_mode == 'estimate':
        return noise_cov_estimate(buf, V)
    raise ValueError(f"unknown covariance mode {ueps_mode!r}")


def _current_V(buf, pol, relift, factor=None):
    if relift:
        return lift(buf, pol.K)
    return affine_project(pol.V, buf.Xbar0, factor)


def _accept(buf, V, direction, eta, info):
    """Shrink ``eta`` until ``V - eta * direction`` keeps the data closed loop stable."""
    limit = 1.0 - TOL.reject_margin
    for halvings in range(MAX_HALVINGS + 1):
        V_new = V - eta * direction
        rho = spectral_radius(buf.Xbar1 @ V_new)
        if rho < limit:
            info.eta, info.halvings, info.rho_next = eta, halvings, rho
            return V_new
        eta *= 0.5
    raise StepRejected(f"no stable step after {MAX_HALVINGS} halvings")


def gd_step(buf, pol, weights, eta, ueps_mode='estimate', relift=True):
    """One projected gradient step on the lifted policy.

    Returns the new :class:`PolicyState` and a :class:`StepInfo`.
    """
    fac = gram_factor(buf.Xbar0)
    V = _current_V(buf, pol, relift, fac)
    U_eps = _noise_cov(buf, V, ueps_mode)
    ev = evaluate(buf, V, weights, U_eps)
    G = project_tangent(ev.grad, buf.Xbar0, fac)
    info = StepInfo(J=ev.J, grad_norm=float(np.linalg.norm(G)), rho=ev.rho, U_eps_hat=U_eps)
    if eta == 0:
        info.eta, info.rho_next = 0.0, ev.rho
        return replace(pol, K=buf.Ubar0 @ V, V=V, step=pol.step + 1), info
    V_new = _accept(buf, V, G, eta, info)
    return replace(pol, K=buf.Ubar0 @ V_new, V=V_new, step=pol.step + 1), info


def adam_step(buf, pol, weights, hyper, ueps_mode='estimate', relift=True, project_grad=True):
    """One ADAM-preconditioned step followed by the affine projection."""
    fac = gram_factor(buf.Xbar0)
    V = _current_V(buf, pol, relift, fac)
    U_eps = _noise_cov(buf, V, ueps_mode)
    ev = evaluate(buf, V, weights, U_eps)
    g = project_tangent(ev.grad, buf.Xbar0, fac) if project_grad else ev.grad
    k = pol.step + 1
    m_prev = np.zeros_like(V) if pol.adam_m is None else pol.adam_m
    v_prev = np.zeros_like(V) if pol.adam_v is None else pol.adam_v
    m = hyper.beta1 * m_prev + (1.0 - hyper.beta1) * g
    v = hyper.beta2 * v_prev + (1.0 - hyper.beta2) * (g * g)
    m_hat = m / (1.0 - hyper.beta1 ** k)
    v_hat = v / (1.0 - hyper.beta2 ** k)
    D = np.sqrt(v_hat) + hyper.epsilon
    grad_max = max(pol.grad_max, float(np.max(np.abs(g))))
    # v_hat is a convex combination of past g^2, so 1/D is bracketed
    d_inv = 1.0 / D
    lo, hi = 1.0 / (grad_max + hyper.epsilon), 1.0 / hyper.epsilon
    if np.min(d_inv) < lo * (1.0 - 1e-9) or np.max(d_inv) > hi * (1.0 + 1e-9):
        raise ArithmeticError(f"ADAM preconditioner outside [{lo:.3e}, {hi:.3e}]")

    info = StepInfo(J=ev.J, grad_norm=float(np.linalg.norm(g)), rho=ev.rho, U_eps_hat=U_eps,
                    d_inv_min=float(np.min(d_inv)), d_inv_max=float(np.max(d_inv)))
    direction = m_hat / D
    # projection is affine in the step so it can be applied before the line search
    P_dir = project_tangent(direction, buf.Xbar0, fac)
    V_feas = affine_project(V, buf.Xbar0, fac)
    V_new = _accept(buf, V_feas, P_dir, hyper.eta(k), info)
    return PolicyState(buf.Ubar0 @ V_new, V_new, m, v, k, grad_max), info
