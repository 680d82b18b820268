"""Ready-to-run experiment setups for the two benchmark systems."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import deepo
from .baselines import MpcConfig, ZopoConfig, mpc_gain, zopo_gradient
from .dhs import ContinuousModel, solve_equilibrium
from .lqr import LqrWeights, model_lqr
from .mathkit import spectral_radius
from .presets import bench3d_system, build_dhs_case, dhs_system, industrial_network
from .simlab import (CertaintyEquivalence, DeepoController, FixedGain, MismatchSpec,
                     NoiseSpec, SetpointTracker, make_real_plant, make_streams,
                     run_closed_loop)


@dataclass
class Experiment:
    system: object
    plant: object
    noise: NoiseSpec
    K0: np.ndarray
    x0: np.ndarray
    warm: int
    steps: int
    streams: dict
    n_T: Optional[int] = None
    extras: dict = field(default_factory=dict)

    @property
    def weights(self):
        return self.system.weights

    @property
    def U_eps(self):
        return self.noise.true_cov(self.plant.B, self.plant.B_w)

    def optimum(self, k=None):
        """``(K*, P*, C*)`` of the real plant at step ``k`` (default: last)."""
        k = self.warm + self.steps - 1 if k is None else k
        return model_lqr(self.plant.A_at(k), self.plant.B, self.weights, self.U_eps)


def bench3d_experiment(seed, bw='Bw1', delta_e=0.1, steps=2000, warm=50, sigma_w=0.1,
                       sigma_s=1.0, distribution='gaussian'):
    """Marginally unstable 3-state benchmark.

    The initial gain is the LQR gain of the design model ``(1 + delta_e) A``.
    """
    system = bench3d_system(bw)
    noise = NoiseSpec(sigma_w, sigma_s, distribution)
    plant = make_real_plant(system, MismatchSpec())
    K0, _, _ = model_lqr((1.0 + delta_e) * system.A, system.B, system.weights)
    if spectral_radius(system.A + system.B @ K0) >= 1:
        raise ValueError(f"design mismatch {delta_e} does not give a stabilizing gain")
    return Experiment(system, plant, noise, K0, np.zeros(system.n), warm, steps,
                      make_streams(seed), extras={'A_design': (1.0 + delta_e) * system.A})


def industrial_experiment(seed, delta_e=0.2, delta_c_amp=0.0, waveform='uniform-iid',
                          period=1000, steps=10000, warm=100, sigma_w=0.0042, sigma_s=0.1,
                          distribution='gaussian', f_g=(1.0, 2.0, 3.0), f_d=1.0,
                          total_demand=10.0, tau=0.1, initial_dispatch='equal',
                          q_scale=1.0, r_scale=1.0):
    """Synthesized industrial-park network with thermal mismatch.

    The initial gain is the LQR gain of the nominal model. The run starts
    from ambient temperatures ``T_0 = 0`` with ``hG_{-1} = hG_0``; the first
    temperature increment comes from the real plant so the augmented state
    stays consistent with the physical one.
    """
    case = build_dhs_case(industrial_network(), f_g, f_d, tau, total_demand)
    n = case.augmented.n
    m = case.augmented.m
    system = dhs_system(case, q_scale * np.eye(n), r_scale * np.eye(m))
    streams = make_streams(seed)
    mismatch = MismatchSpec(delta_e, delta_c_amp, waveform, period)
    plant = make_real_plant(system, mismatch, warm + steps, streams['mismatch'])
    noise = NoiseSpec(sigma_w, sigma_s, distribution)
    K0, _, _ = model_lqr(system.A, system.B, system.weights, noise.true_cov(system.B, system.B_w))

    eq_nominal = solve_equilibrium(case.continuous, case.spec, case.load)
    cm = case.continuous
    cm_real = ContinuousModel((1.0 + delta_e) * cm.A1, cm.B1, cm.B2, cm.volumes)
    eq_real = solve_equilibrium(cm_real, case.spec, case.load)

    S = float(np.sum(case.load))
    if initial_dispatch == 'equal':
        hG0 = np.full(m, S / m)
    elif initial_dispatch == 'optimal':
        hG0 = eq_nominal.hG_star.copy()
    else:
        raise ValueError(f"unknown initial dispatch {initial_dispatch!r}")
    n_T = case.augmented.n_T
    T0 = np.zeros(n_T)
    dm = case.discrete
    A_T_real = plant.A_at(0)[:n_T, :n_T]
    T1 = A_T_real @ T0 + dm.B_T @ hG0 + dm.B_T_L @ case.load
    e0 = case.augmented.C_T @ T0 + case.augmented.D_T @ hG0
    x0 = np.concatenate([T1 - T0, e0])
    extras = {'case': case, 'eq_nominal': eq_nominal, 'eq_real': eq_real, 'T0': T0,
              'hG0': hG0, 'e0': e0}
    return Experiment(system, plant, noise, K0, x0, warm, steps, streams, n_T, extras)


class ZopoController(FixedGain):
    """Zeroth-order updates interleaved with closed-loop operation.

    Each update is charged ``cfg.samples_per_update`` closed-loop steps;
    gradient rollouts are simulated on the plant frozen at the update step.
    """
    name = 'zopo'

    def __init__(self, plant, weights, U_eps, cfg, rng):
        super().__init__(np.zeros((0, 0)))
        self.plant, self.weights, self.U_eps = plant, weights, U_eps
        self.cfg, self.rng = cfg, rng
        self.k = 0

    def start(self, batch, K0):
        self.K = np.asarray(K0, dtype=float).copy()

    def observe(self, t, u, x, x_next):
        self.k += 1
        if self.k % self.cfg.samples_per_update:
            return None
        A = self.plant.A_at(t)
        g = zopo_gradient(self.K, A, self.plant.B, self.U_eps, self.weights, self.cfg, self.rng)
        K_new = self.K - self.cfg.stepsize * g
        if spectral_radius(A + self.plant.B @ K_new) >= 1:
            return "zopo step skipped (destabilizing)"
        self.K = K_new
        return None


def make_controller(exp, algo, params=None):
    """Controller for ``algo`` with hyperparameters from ``params`` (a config dict)."""
    params = {} if params is None else params
    if algo == 'fixed':
        return FixedGain(exp.K0)
    if algo == 'ce':
        return CertaintyEquivalence(exp.weights)
    if algo == 'gd':
        p = params.get('gd', {})
        return DeepoController(exp.weights, 'gd', eta=p.get('eta', 0.01),
                               ueps_mode=p.get('ueps_mode', 'estimate'),
                               relift=p.get('relift', True))
    if algo == 'adam':
        p = params.get('adam', {})
        hyper = deepo.AdamHyper(p.get('eta0', 0.01), p.get('beta1', 0.9), p.get('beta2', 0.999),
                                p.get('epsilon', 1e-8), p.get('decay', True))
        return DeepoController(exp.weights, 'adam', hyper=hyper,
                               ueps_mode=p.get('ueps_mode', 'estimate'),
                               relift=p.get('relift', True),
                               project_grad=p.get('project_grad', True))
    if algo == 'zopo':
        p = params.get('zopo', {})
        cfg = ZopoConfig(p.get('radius', 0.05), p.get('rollout_len', 150), p.get('n_dir', 10),
                         p.get('stepsize', 1e-3))
        return ZopoController(exp.plant, exp.weights, exp.U_eps, cfg, exp.streams['zo'])
    if algo == 'mpc':
        cfg = MpcConfig(params.get('mpc', {}).get('horizon', 20))
        if 'case' not in exp.extras:
            A_design = exp.extras.get('A_design', exp.system.A)
            return FixedGain(mpc_gain(A_design, exp.system.B, exp.weights, cfg))
        case = exp.extras['case']
        n_T = exp.n_T
        dm = case.discrete
        w_T = LqrWeights(exp.weights.Q[:n_T, :n_T], exp.weights.R)
        K_T = mpc_gain(dm.A_T, dm.B_T, w_T, cfg)
        eq = exp.extras['eq_nominal']
        return SetpointTracker(K_T, eq.T_star, eq.hG_star, exp.extras['T0'], exp.extras['hG0'])
    raise ValueError(f"unknown algorithm {algo!r}")


def run(exp, controller, cost_stride=1, keep_ueps=False):
    warm = 0 if controller.name == 'mpc' and 'case' in exp.extras else exp.warm
    return run_closed_loop(exp.plant, controller, exp.noise, exp.weights, exp.K0, exp.steps,
                           warm, exp.streams, x0=exp.x0, cost_stride=cost_stride,
                           keep_ueps=keep_ueps, n_T=exp.n_T)
