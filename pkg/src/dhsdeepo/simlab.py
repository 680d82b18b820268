"""Closed-loop simulation of the (possibly mismatched, time-varying) plant.

A run has a warm-start phase under the initial gain, which produces the
offline batch, followed by ``steps`` online iterations in which the
controller may update its gain after every sample. Every random quantity
is drawn up front from named per-run streams, so a seed fixes the run
bit for bit.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_discrete_are
from scipy.stats import truncnorm

from . import deepo
from .constants import TOL
from .errors import (DivergenceDetected, Infeasible, InsufficientData, NonFinite,
                     RankDeficient, StepRejected)
from .lqr import DataBatch, ce_lqr, cost_matrix, ls_identify, lqr_cost, residual_cov
from .mathkit import spectral_radius

log = logging.getLogger(__name__)

STREAM_IDS = {'process': 0, 'exploration': 1, 'zo': 2, 'mismatch': 3}
TRUNCATION = 3.0


def make_streams(seed):
    """Independent generators keyed by purpose, all derived from one seed."""
    return {name: np.random.default_rng(np.random.SeedSequence([int(seed), idx]))
            for name, idx in STREAM_IDS.items()}


@dataclass(frozen=True)
class NoiseSpec:
    """Process noise ``sigma_w * v`` and exploration ``sigma_s * v``.

    ``distribution`` is ``'gaussian'`` or ``'truncated'`` (standard normal
    clipped to +-3 by rejection, then scaled).
    """
    sigma_w: float = 0.0
    sigma_s: float = 0.0
    distribution: str = 'gaussian'
    bound: Optional[float] = None

    def __post_init__(self):
        if self.sigma_w < 0 or self.sigma_s < 0:
            raise ValueError("noise scales must be non-negative")
        if self.distribution not in ('gaussian', 'truncated'):
            raise ValueError(f"unknown distribution {self.distribution!r}")

    @property
    def variance_factor(self):
        if self.distribution == 'truncated':
            return float(truncnorm.var(-TRUNCATION, TRUNCATION))
        return 1.0

    def draw(self, rng, shape):
        """Unit-scale draws (variance ``variance_factor`` per entry)."""
        if self.distribution == 'truncated':
            return truncnorm.rvs(-TRUNCATION, TRUNCATION, size=shape, random_state=rng)
        return rng.standard_normal(shape)

    def true_cov(self, B, B_w):
        """Covariance of ``eps = B_w w + B sigma_s v``."""
        vf = self.variance_factor
        return vf * (self.sigma_w ** 2 * B_w @ B_w.T + self.sigma_s ** 2 * B @ B.T)

    def disturbance_bound(self, d_w):
        """Norm bound on ``w``: ``3 sigma_w sqrt(d_w)`` unless configured."""
        if self.bound is not None:
            return float(self.bound)
        return TRUNCATION * self.sigma_w * np.sqrt(d_w)


@dataclass(frozen=True)
class MismatchSpec:
    """Thermal time-scale perturbation ``delta_e (1 + delta_c(k))``."""
    delta_e: float = 0.0
    delta_c_amp: float = 0.0
    waveform: str = 'uniform-iid'
    period: int = 1000

    def __post_init__(self):
        if self.delta_c_amp < 0:
            raise ValueError("delta_c_amp must be non-negative")
        if self.waveform not in ('uniform-iid', 'sinusoid'):
            raise ValueError(f"unknown waveform {self.waveform!r}")
        if self.period < 1:
            raise ValueError("period must be positive")

    def sequence(self, length, rng):
        if self.delta_c_amp == 0:
            return np.zeros(length)
        if self.waveform == 'uniform-iid':
            return rng.uniform(-self.delta_c_amp, self.delta_c_amp, length)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        k = np.arange(length)
        return self.delta_c_amp * np.sin(2.0 * np.pi * k / self.period + phase)


@dataclass(frozen=True)
class Plant:
    """``x+ = A(k) x + B u + B_w w`` with ``A(k) = A_nominal - f(k) * thermal``."""
    A_nominal: np.ndarray
    B: np.ndarray
    B_w: np.ndarray
    thermal: Optional[np.ndarray] = None
    delta_e: float = 0.0
    delta_c: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def time_varying(self):
        return (self.thermal is not None and self.delta_e != 0
                and self.delta_c is not None and np.any(self.delta_c != 0))

    def factor(self, k):
        if self.delta_c is None or len(self.delta_c) == 0:
            return self.delta_e
        return self.delta_e * (1.0 + self.delta_c[min(k, len(self.delta_c) - 1)])

    def A_at(self, k):
        if self.thermal is None:
            return self.A_nominal
        return self.A_nominal - self.factor(k) * self.thermal


def make_real_plant(system, mismatch, length=0, rng=None):
    """Real plant for a benchmark system under ``mismatch``.

    Systems without a thermal block ignore the mismatch (their model error
    lives in the design model instead).
    """
    if system.thermal is None:
        return Plant(system.A, system.B, system.B_w)
    delta_c = None
    if mismatch.delta_c_amp > 0:
        if rng is None:
            raise ValueError("a generator is needed for time-varying mismatch")
        delta_c = mismatch.sequence(length, rng)
    return Plant(system.A, system.B, system.B_w, system.thermal, mismatch.delta_e, delta_c)


def simulate_step(A, B, B_w, x, u, w):
    x_next = A @ x + B @ u + B_w @ w
    if not np.all(np.isfinite(x_next)):
        raise NonFinite("state became non-finite")
    return x_next


def physical_rollout(A_T_at, B_T, B_T_L, T0, hG_seq, hL_seq):
    """Forward-simulate temperatures ``T_{k+1} = A_T(k) T_k + B_T hG_k + B_T_L hL_k``.

    Returns ``T_1 .. T_N`` for input sequences of length ``N``.
    """
    T = np.asarray(T0, dtype=float).copy()
    out = np.empty((len(hG_seq), T.size))
    for k, (hG, hL) in enumerate(zip(hG_seq, hL_seq)):
        T = A_T_at(k) @ T + B_T @ hG + B_T_L @ hL
        out[k] = T
    return out


class HankelGram:
    """Running Gram matrix of the depth-``depth`` input Hankel matrix.

    ``sigma_min()`` equals the smallest singular value of
    ``hankel_matrix(u_seq, depth)`` (0 while it has fewer columns than rows).
    """

    def __init__(self, m, depth):
        self.m, self.depth = m, depth
        self.G = np.zeros((m * depth, m * depth))
        self.window = deque(maxlen=depth)
        self.t = 0
        self.cols = 0

    def push(self, u):
        self.window.append(np.asarray(u, dtype=float).reshape(-1))
        self.t += 1
        if len(self.window) == self.depth:
            h = np.concatenate(self.window)
            self.G += np.outer(h, h)
            self.cols += 1

    def sigma_min(self):
        if self.cols < self.m * self.depth:
            return 0.0
        return float(np.sqrt(max(np.linalg.eigvalsh(self.G)[0], 0.0)))

    def gamma_hat(self):
        if self.t == 0:
            return 0.0
        return self.sigma_min() / np.sqrt(self.t * self.depth)


def snr_report(u_seq, noise, n, d_w=None):
    """Excitation-to-disturbance ratio of an input record.

    ``gamma_hat = sigma_min(H_{n+1}(u)) / sqrt(t (n+1))`` and ``delta`` is the
    disturbance norm bound of ``noise``.
    """
    U = np.atleast_2d(np.asarray(u_seq, dtype=float))
    if U.shape[0] == 1 and U.shape[1] > 1 and np.ndim(u_seq) == 1:
        U = U.T
    t, m = U.shape
    if t < n + 1:
        raise InsufficientData(f"need at least n+1={n + 1} inputs, got {t}")
    acc = HankelGram(m, n + 1)
    for u in U:
        acc.push(u)
    gamma = acc.gamma_hat()
    delta = noise.disturbance_bound(m if d_w is None else d_w)
    snr = gamma / delta if delta > 0 else np.inf
    return {'gamma_hat': gamma, 'delta': delta, 'snr': snr}


# -- controllers ------------------------------------------------------------

class FixedGain:
    name = 'fixed'
    explores = True

    def __init__(self, K):
        self.K = np.asarray(K, dtype=float)
        self.ueps_hat = None

    def start(self, batch, K0):
        pass

    def act(self, x):
        return self.K @ x

    def observe(self, t, u, x, x_next):
        return None


class CertaintyEquivalence(FixedGain):
    """Identify once from the warm-start batch, then apply the CE gain."""
    name = 'ce'

    def __init__(self, weights):
        super().__init__(np.zeros((0, 0)))
        self.weights = weights

    def start(self, batch, K0):
        A_hat, B_hat, _ = ls_identify(batch)
        self.ueps_hat = residual_cov(batch, A_hat, B_hat, K0)
        self.K = ce_lqr(A_hat, B_hat, self.weights)


class SetpointTracker(FixedGain):
    """Regulate physical temperatures to a forecast setpoint.

    ``hG_k = hG_ref + K_T (T_k - T_ref)``, applied as the increment
    ``u_k = hG_k - hG_{k-1}``. There is no integral channel, so model
    mismatch leaves a steady offset in the optimality error.
    """
    name = 'mpc'
    explores = False

    def __init__(self, K_T, T_ref, hG_ref, T_prev, hG_prev):
        super().__init__(np.hstack([K_T, np.zeros((K_T.shape[0], len(hG_ref)))]))
        self.K_T = np.asarray(K_T, dtype=float)
        self.T_ref = np.asarray(T_ref, dtype=float)
        self.hG_ref = np.asarray(hG_ref, dtype=float)
        self.T = np.asarray(T_prev, dtype=float).copy()
        self.hG = np.asarray(hG_prev, dtype=float).copy()

    def act(self, x):
        T = self.T + x[:self.T.size]
        return self.hG_ref + self.K_T @ (T - self.T_ref) - self.hG

    def observe(self, t, u, x, x_next):
        self.T = self.T + x[:self.T.size]
        self.hG = self.hG + u
        return None


class DeepoController(FixedGain):
    """Online policy optimization with one gradient step per sample.

    ``algo`` is ``'gd'`` (fixed stepsize ``eta``) or ``'adam'``.
    """

    def __init__(self, weights, algo='gd', eta=1e-2, hyper=None, ueps_mode='estimate',
                 relift=True, project_grad=True, recheck_every=None):
        if algo not in ('gd', 'adam'):
            raise ValueError(f"unknown algorithm {algo!r}")
        super().__init__(np.zeros((0, 0)))
        self.name = algo
        self.weights = weights
        self.eta = eta
        self.hyper = deepo.AdamHyper() if hyper is None else hyper
        self.ueps_mode = ueps_mode
        self.relift = relift
        self.project_grad = project_grad
        self.recheck_every = TOL.phi_recheck_every if recheck_every is None else recheck_every
        self.buf = None
        self.pol = None
        self.info = None

    def start(self, batch, K0):
        self.buf, self.pol = deepo.warm_start(batch, K0)
        self.K = self.pol.K
        self.ueps_hat = deepo.noise_cov_estimate(self.buf, self.pol.V)

    def observe(self, t, u, x, x_next):
        event = None
        self.buf = deepo.rank1_update(self.buf, u, x, x_next)
        if self.recheck_every and (t + 1) % self.recheck_every == 0:
            drift = self.buf.inverse_drift(relative=True)
            if drift > TOL.constraint:
                self.buf = self.buf.resync()
                event = f"resync drift={drift:.3e}"
        try:
            if self.name == 'gd':
                pol, info = deepo.gd_step(self.buf, self.pol, self.weights, self.eta,
                                          self.ueps_mode, self.relift)
            else:
                pol, info = deepo.adam_step(self.buf, self.pol, self.weights, self.hyper,
                                            self.ueps_mode, self.relift, self.project_grad)
        except (StepRejected, Infeasible, RankDeficient) as exc:
            return f"{type(exc).__name__}: {exc}"
        self.pol, self.info = pol, info
        self.K = pol.K
        self.ueps_hat = info.U_eps_hat
        return event


# -- trajectories -------------------------------------------------------------

@dataclass
class Trajectory:
    """Record of one closed-loop run.

    ``x[0]`` is the initial state and ``x[k+1]`` follows input ``u[k]``;
    indices ``0 .. warm-1`` are the warm-start phase. Cost-related arrays
    are aligned with ``cost_t`` (online iteration indices).
    """
    x: np.ndarray
    u: np.ndarray
    warm: int
    cost_t: np.ndarray
    cost: np.ndarray
    c_star: np.ndarray
    rho: np.ndarray
    snr: np.ndarray
    gains: np.ndarray
    ueps_hat: Optional[np.ndarray]
    U_eps: np.ndarray
    final_K: np.ndarray
    final_cost: float
    final_c_star: float
    events: list
    failed: Optional[str] = None
    n_T: Optional[int] = None

    @property
    def rel_error(self):
        with np.errstate(invalid='ignore', divide='ignore'):
            return np.abs(self.cost - self.c_star) / self.c_star

    @property
    def final_rel_error(self):
        if not np.isfinite(self.final_cost):
            return np.inf
        return abs(self.final_cost - self.final_c_star) / self.final_c_star

    @property
    def e(self):
        """Optimality error ``e_{k-1}`` carried in the lower state block."""
        if self.n_T is None:
            raise ValueError("trajectory has no optimality-error block")
        return self.x[:, self.n_T:]


class _CStarCache:
    def __init__(self, plant, weights, U_eps):
        self.plant, self.weights, self.U_eps = plant, weights, U_eps
        self.cache = {}

    def __call__(self, k):
        key = self.plant.factor(k) if self.plant.thermal is not None else 0.0
        if key not in self.cache:
            A = self.plant.A_at(k)
            P = solve_discrete_are(A, self.plant.B, self.weights.Q, self.weights.R)
            self.cache[key] = float(np.trace(P @ self.U_eps))
        return self.cache[key]


def run_closed_loop(plant, controller, noise, weights, K0, steps, warm, streams,
                    x0=None, cost_stride=1, snr_depth=None, keep_ueps=False, n_T=None):
    """Simulate ``warm`` steps under ``K0`` then ``steps`` online iterations.

    ``u_k = K_t x_k + sigma_s v_k`` (no exploration for controllers with
    ``explores = False`` during the online phase). The true cost of the gain
    in force at iteration t is evaluated on the plant frozen at that step
    every ``cost_stride`` iterations; the final gain is always evaluated.
    ``n_T`` marks where the optimality-error block starts in ``x``.
    """
    n, m = plant.B.shape
    d_w = plant.B_w.shape[1]
    total = warm + steps
    W = noise.sigma_w * noise.draw(streams['process'], (total, d_w))
    S = noise.sigma_s * noise.draw(streams['exploration'], (total, m))
    U_eps = noise.true_cov(plant.B, plant.B_w)
    c_star_at = _CStarCache(plant, weights, U_eps)
    hankel = HankelGram(m, (n + 1) if snr_depth is None else snr_depth)
    delta = noise.disturbance_bound(d_w)

    K0 = np.asarray(K0, dtype=float)
    X = np.zeros((total + 1, n))
    U = np.zeros((total, m))
    X[0] = np.zeros(n) if x0 is None else x0
    events = []
    cost_rows = []

    def step(k, u):
        U[k] = u
        X[k + 1] = simulate_step(plant.A_at(k), plant.B, plant.B_w, X[k], u, W[k])
        hankel.push(u)
        if np.linalg.norm(X[k + 1]) > TOL.divergence_cap:
            raise DivergenceDetected(f"|x| exceeded {TOL.divergence_cap:g} at step {k}")

    failed = None
    try:
        for k in range(warm):
            step(k, K0 @ X[k] + S[k])
        if warm:
            batch = DataBatch(X[:warm].T.copy(), U[:warm].T.copy(), X[1:warm + 1].T.copy())
            controller.start(batch, K0)
        else:
            controller.start(None, K0)
        for t in range(steps):
            k = warm + t
            K_t = controller.K
            if t % cost_stride == 0:
                cost_rows.append(_cost_row(t, k, K_t, plant, weights, U_eps, c_star_at,
                                           hankel, delta, controller, keep_ueps))
            u = controller.act(X[k])
            if controller.explores:
                u = u + S[k]
            step(k, u)
            ev = controller.observe(t, u, X[k], X[k + 1])
            if ev:
                events.append((t, ev))
    except (DivergenceDetected, NonFinite) as exc:
        failed = f"{type(exc).__name__}: {exc}"
        log.warning("run aborted: %s", failed)

    k_last = warm + steps - 1 if steps else max(warm - 1, 0)
    final_K = controller.K
    final_cost = np.inf if failed else lqr_cost(plant.A_at(k_last), plant.B, final_K,
                                                weights, U_eps, check_duality=False)
    final_c_star = c_star_at(k_last)

    def col(i, dtype=float):
        return np.array([r[i] for r in cost_rows], dtype=dtype)

    ueps = None
    if keep_ueps and cost_rows:
        ueps = np.array([r[6] for r in cost_rows])
    gains = np.array([r[5] for r in cost_rows]) if cost_rows else np.zeros((0,) + final_K.shape)
    return Trajectory(X, U, warm, col(0, int), col(1), col(2), col(3), col(4), gains, ueps,
                      U_eps, final_K, final_cost, final_c_star, events, failed, n_T)


def _cost_row(t, k, K, plant, weights, U_eps, c_star_at, hankel, delta, controller, keep_ueps):
    A = plant.A_at(k)
    rho = spectral_radius(A + plant.B @ K)
    c = lqr_cost(A, plant.B, K, weights, U_eps, check_duality=False) if rho < 1 else np.inf
    snr = hankel.gamma_hat() / delta if delta > 0 else np.inf
    ueps = None
    if keep_ueps:
        ueps = controller.ueps_hat if controller.ueps_hat is not None else np.full_like(U_eps, np.nan)
    return (t, c, c_star_at(k), rho, snr, K.copy(), ueps)


# -- regret -------------------------------------------------------------------

@dataclass(frozen=True)
class RegretReport:
    costs: np.ndarray
    c_star: float
    regret: float
    noise_mismatch: np.ndarray
    ce_regret: np.ndarray
    optimal_bias: np.ndarray
    rel_error: float

    @property
    def gap(self):
        return self.costs - self.c_star

    def identity_residual(self):
        """Largest per-step violation of ``gap = mismatch + CE + bias``."""
        parts = self.noise_mismatch + self.ce_regret + self.optimal_bias
        return float(np.max(np.abs(parts - self.gap))) if self.costs.size else 0.0


def regret(traj, A, B, weights, K_star, U_eps=None):
    """Average gap and its split by noise-covariance error.

    With ``P_K`` from the true model, ``e = U_eps - Uhat_eps`` and
    ``Chat(K) = Tr(P_K Uhat_eps)``::

        C(K_t) - C* = Tr(P_{K_t} e) + (Chat(K_t) - Chat(K*)) + (Chat(K*) - C*)

    Only valid for a static plant; requires the trajectory to carry the
    estimates (``keep_ueps=True``).
    """
    U_eps = traj.U_eps if U_eps is None else U_eps
    P_star = cost_matrix(A, B, K_star, weights)
    c_star = float(np.trace(P_star @ U_eps))
    T = len(traj.cost)
    mis, ce, bias, costs = (np.empty(T) for _ in range(4))
    for i in range(T):
        K = traj.gains[i]
        P = cost_matrix(A, B, K, weights)
        U_hat = traj.ueps_hat[i] if traj.ueps_hat is not None else U_eps
        costs[i] = float(np.trace(P @ U_eps))
        mis[i] = costs[i] - float(np.trace(P @ U_hat))
        c_hat_star = float(np.trace(P_star @ U_hat))
        ce[i] = float(np.trace(P @ U_hat)) - c_hat_star
        bias[i] = c_hat_star - c_star
    reg = float(np.mean(costs - c_star)) if T else 0.0
    rel = abs(costs[-1] - c_star) / c_star if T else np.nan
    return RegretReport(costs, c_star, reg, mis, ce, bias, rel)
