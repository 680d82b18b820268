"""Benchmark systems: the 3-state Laplacian benchmark and a synthesized
industrial-park heating network (3 producers, 8 loads, 8 nodes)."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .augment import build_augmented, build_error_maps
from .dhs import (DiscreteModel, EconomicSpec, Edge, EdgeKind, HeatNetwork, Node,
                  build_continuous, discretize, solve_equilibrium)
from .lqr import LqrWeights

BENCH3D_A = np.array([[1.01, 0.01, 0.00],
                      [0.01, 1.01, 0.01],
                      [0.00, 0.01, 1.01]])

BENCH3D_BW = {
    'Bw1': np.eye(3),
    'Bw2': np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
    'Bw3': np.array([[1.0, 1.0, 0.5], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
    'Bw4': np.array([[1.0, 1.0, 1.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
}

# Tables 2-4 sweep grid
STATIC_MISMATCH = (-0.15, 0.15, -0.20, 0.20, -0.01, 0.01, -0.02, 0.02)
TIME_VARYING_AMPLITUDES = (0.10, 0.30, 0.50, 0.80)


@dataclass(frozen=True)
class LinearSystem:
    """Plain ``x+ = A x + B u + B_w w`` with optional heating-network context."""
    A: np.ndarray
    B: np.ndarray
    B_w: np.ndarray
    weights: LqrWeights
    thermal: Optional[np.ndarray] = None  # tau * A1 embedded in n x n, for mismatch
    dhs: Optional['DhsCase'] = None

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]


@dataclass(frozen=True)
class DhsCase:
    network: HeatNetwork
    spec: EconomicSpec
    continuous: object
    discrete: DiscreteModel
    augmented: object
    load: np.ndarray


def bench3d_system(bw='Bw1'):
    B_w = BENCH3D_BW[bw] if isinstance(bw, str) else np.asarray(bw, dtype=float)
    return LinearSystem(BENCH3D_A.copy(), np.eye(3), B_w, LqrWeights.identity(3, 3))


def industrial_network(flow_scale=1.0):
    """Three circulation loops, one producer each, sharing nodes N2, N4, N7.

    Every edge belongs to exactly one loop, so node flow balance holds by
    construction.
    """
    q1, q2, q3 = 1.0 * flow_scale, 0.8 * flow_scale, 0.6 * flow_scale
    P, L = EdgeKind.PRODUCER, EdgeKind.LOAD
    edges = (
        Edge('P1', P, 'N1', 'N2', q1, 1.0),
        Edge('L1', L, 'N2', 'N3', q1, 0.8),
        Edge('L2', L, 'N3', 'N4', q1, 0.8),
        Edge('L3', L, 'N4', 'N1', q1, 0.8),
        Edge('P2', P, 'N4', 'N5', q2, 1.0),
        Edge('L4', L, 'N5', 'N6', q2, 0.8),
        Edge('L5', L, 'N6', 'N7', q2, 0.8),
        Edge('L6', L, 'N7', 'N4', q2, 0.8),
        Edge('P3', P, 'N7', 'N8', q3, 1.0),
        Edge('L7', L, 'N8', 'N2', q3, 0.8),
        Edge('L8', L, 'N2', 'N7', q3, 0.8),
    )
    nodes = tuple(Node(f'N{i}', 1.5) for i in range(1, 9))
    return HeatNetwork(edges, nodes)


def build_dhs_case(network, f_g, f_d=None, tau=0.1, total_demand=10.0):
    """Assemble models and the nominal augmented system for a network.

    The total demand is split evenly across load edges.
    """
    cm = build_continuous(network)
    n_T = cm.n_T
    f_d = np.ones(n_T) if f_d is None else np.broadcast_to(np.asarray(f_d, float), (n_T,))
    spec = EconomicSpec.from_diagonals(f_g, f_d)
    dm = discretize(cm, tau)
    C_T, D_T = build_error_maps(spec, n_T)
    aug = build_augmented(dm, C_T, D_T)
    load = np.full(network.n_loads, total_demand / network.n_loads)
    return DhsCase(network, spec, cm, dm, aug, load)


def dhs_system(case, Q=None, R=None):
    aug = case.augmented
    n, m = aug.n, aug.m
    weights = LqrWeights(np.eye(n) if Q is None else Q, np.eye(m) if R is None else R)
    thermal = np.zeros((n, n))
    thermal[:aug.n_T, :aug.n_T] = case.discrete.tau * case.continuous.A1
    return LinearSystem(aug.A.copy(), aug.B.copy(), aug.B_w.copy(), weights, thermal, case)


def industrial_case(tau=0.1, f_g=(1.0, 2.0, 3.0), f_d=1.0, total_demand=10.0):
    return build_dhs_case(industrial_network(), f_g, f_d, tau, total_demand)


def industrial_equilibrium(case):
    return solve_equilibrium(case.continuous, case.spec, case.load)
