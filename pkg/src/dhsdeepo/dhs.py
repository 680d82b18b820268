"""District heating network models and steady-state economic problems.

Temperatures of every edge outlet and every node form the thermal state.
Edges are stored producer-first, then loads, then pipes; nodes come last::

    T = [T^G; T^L; T^P; T^N]

All heat quantities are pre-scaled by ``1 / (rho * c_p)``, so a heat rate
is expressed in (volume / time) * kelvin.
"""

import warnings
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .constants import TOL
from .errors import (DimensionMismatch, DisconnectedNetwork, FlowImbalance,
                     StepTooLarge)
from .mathkit import pinv, spectral_radius


class EdgeKind(str, Enum):
    PRODUCER = 'producer'
    LOAD = 'load'
    PIPE = 'pipe'


_KIND_ORDER = {EdgeKind.PRODUCER: 0, EdgeKind.LOAD: 1, EdgeKind.PIPE: 2}


@dataclass(frozen=True)
class Edge:
    id: str
    kind: EdgeKind
    tail: str
    head: str
    flow: float
    volume: float


@dataclass(frozen=True)
class Node:
    id: str
    volume: float


@dataclass(frozen=True)
class HeatNetwork:
    """Declarative network topology.

    The incidence matrix uses ``+1`` where an edge enters a node (head)
    and ``-1`` where it leaves (tail). Construction validates references,
    positivity and connectivity; flow balance is checked when the
    Kirchhoff matrix is built.
    """
    edges: tuple
    nodes: tuple

    def __post_init__(self):
        edges = tuple(sorted((Edge(e.id, EdgeKind(e.kind), e.tail, e.head,
                                   float(e.flow), float(e.volume))
                              for e in self.edges),
                             key=lambda e: _KIND_ORDER[e.kind]))
        nodes = tuple(Node(n.id, float(n.volume)) for n in self.nodes)
        object.__setattr__(self, 'edges', edges)
        object.__setattr__(self, 'nodes', nodes)

        node_ids = [n.id for n in nodes]
        if len(set(node_ids)) != len(node_ids):
            raise ValueError("duplicate node ids")
        edge_ids = [e.id for e in edges]
        if len(set(edge_ids)) != len(edge_ids):
            raise ValueError("duplicate edge ids")
        known = set(node_ids)
        for e in edges:
            if e.tail not in known or e.head not in known:
                raise ValueError(f"edge {e.id!r} references an unknown node")
            if e.tail == e.head:
                raise ValueError(f"edge {e.id!r} is a self loop")
            if not e.flow > 0:
                raise ValueError(f"edge {e.id!r} must carry positive flow")
            if not e.volume > 0:
                raise ValueError(f"edge {e.id!r} must have positive volume")
        for n in nodes:
            if not n.volume > 0:
                raise ValueError(f"node {n.id!r} must have positive volume")
        if not any(e.kind is EdgeKind.PRODUCER for e in edges):
            raise ValueError("network needs at least one producer edge")

        index = {nid: i for i, nid in enumerate(node_ids)}
        rows = [index[e.tail] for e in edges]
        cols = [index[e.head] for e in edges]
        adj = coo_matrix((np.ones(len(edges)), (rows, cols)),
                         shape=(len(nodes), len(nodes)))
        n_comp, _ = connected_components(adj, directed=False)
        if n_comp != 1:
            raise DisconnectedNetwork(f"network has {n_comp} components")

    @classmethod
    def from_dict(cls, data):
        nodes = [Node(str(n['id']), n['volume']) for n in data['nodes']]
        edges = [Edge(str(e['id']), EdgeKind(e['kind']), str(e['tail']),
                      str(e['head']), e['flow'], e['volume'])
                 for e in data['edges']]
        return cls(tuple(edges), tuple(nodes))

    def to_dict(self):
        return {
            'nodes': [{'id': n.id, 'volume': n.volume} for n in self.nodes],
            'edges': [{'id': e.id, 'kind': e.kind.value, 'tail': e.tail,
                       'head': e.head, 'flow': e.flow, 'volume': e.volume}
                      for e in self.edges],
        }

    def edges_of(self, kind):
        return [e for e in self.edges if e.kind is EdgeKind(kind)]

    @property
    def n_producers(self):
        return len(self.edges_of(EdgeKind.PRODUCER))

    @property
    def n_loads(self):
        return len(self.edges_of(EdgeKind.LOAD))

    @property
    def n_states(self):
        return len(self.edges) + len(self.nodes)

    @property
    def state_labels(self):
        return [f"E:{e.id}" for e in self.edges] + [f"N:{n.id}" for n in self.nodes]

    @cached_property
    def incidence(self):
        index = {n.id: i for i, n in enumerate(self.nodes)}
        Bh = np.zeros((len(self.nodes), len(self.edges)))
        for j, e in enumerate(self.edges):
            Bh[index[e.head], j] = 1.0
            Bh[index[e.tail], j] = -1.0
        return Bh

    @property
    def flows(self):
        return np.array([e.flow for e in self.edges])

    @property
    def volumes(self):
        return np.array([e.volume for e in self.edges] + [n.volume for n in self.nodes])

    def flow_imbalance(self):
        """Per-node inflow minus outflow."""
        return self.incidence @ self.flows


def build_kirchhoff(net):
    """Flow-weighted Kirchhoff matrix ``A_h`` of the network.

    ``A_h = [[diag(q), -diag(q) B_sh], [-B_th diag(q), diag(B_th q)]]`` with
    ``B_th`` selecting edge heads and ``B_sh`` edge tails.
    """
    imbalance = net.flow_imbalance()
    worst = float(np.max(np.abs(imbalance)))
    if worst > TOL.flow_balance * max(1.0, float(np.max(net.flows))):
        raise FlowImbalance(f"node flow imbalance up to {worst:.3e}")
    Bh = net.incidence
    Bth = 0.5 * (np.abs(Bh) + Bh)
    Bsh = 0.5 * (np.abs(Bh) - Bh)
    q = net.flows
    Dq = np.diag(q)
    return np.block([[Dq, -Dq @ Bsh.T],
                     [-Bth @ Dq, np.diag(Bth @ q)]])


@dataclass(frozen=True)
class ContinuousModel:
    """``dT/dt = -A1 T + B1 hG - B2 hL``."""
    A1: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    volumes: np.ndarray = field(repr=False)

    @property
    def n_T(self):
        return self.A1.shape[0]

    @property
    def n_producers(self):
        return self.B1.shape[1]

    @property
    def n_loads(self):
        return self.B2.shape[1]


def build_continuous(net):
    Ah = build_kirchhoff(net)
    vol = net.volumes
    Vinv = np.diag(1.0 / vol)
    n_T = net.n_states
    n_G, n_L = net.n_producers, net.n_loads
    sel_G = np.zeros((n_T, n_G))
    sel_G[:n_G, :] = np.eye(n_G)
    sel_L = np.zeros((n_T, n_L))
    sel_L[n_G:n_G + n_L, :] = np.eye(n_L)
    return ContinuousModel(Vinv @ Ah, Vinv @ sel_G, Vinv @ sel_L, vol)


@dataclass(frozen=True)
class DiscreteModel:
    """``T+ = A_T T + B_T hG + B_T_L hL`` (forward Euler)."""
    A_T: np.ndarray
    B_T: np.ndarray
    B_T_L: np.ndarray
    tau: float


def discretize(cm, tau):
    if tau < 0:
        raise ValueError("sampling interval must be non-negative")
    rho = spectral_radius(cm.A1)
    if rho > 0 and tau >= 2.0 / rho:
        raise StepTooLarge(f"tau={tau} >= 2/rho(A1)={2.0 / rho:.4g}")
    if rho > 0 and tau > 1.0 / rho:
        warnings.warn(f"tau={tau} exceeds 1/rho(A1)={1.0 / rho:.4g}; "
                      "Euler map is oscillatory", RuntimeWarning, stacklevel=2)
    n = cm.n_T
    return DiscreteModel(np.eye(n) - tau * cm.A1, tau * cm.B1, -tau * cm.B2, tau)


@dataclass(frozen=True)
class EconomicSpec:
    """Producer cost ``1/2 h' F_G h`` and temperature cost ``1/2 T' F_D T``."""
    F_G: np.ndarray
    F_D: np.ndarray

    def __post_init__(self):
        F_G = np.atleast_2d(np.asarray(self.F_G, dtype=float))
        F_D = np.atleast_2d(np.asarray(self.F_D, dtype=float))
        if F_G.shape[0] == 1 and F_G.shape[1] > 1:
            F_G = np.diag(F_G[0])
        if F_D.shape[0] == 1 and F_D.shape[1] > 1:
            F_D = np.diag(F_D[0])
        for name, F in (('F_G', F_G), ('F_D', F_D)):
            if F.shape[0] != F.shape[1] or np.count_nonzero(F - np.diag(np.diag(F))):
                raise ValueError(f"{name} must be a square diagonal matrix")
            if not np.all(np.diag(F) > 0):
                raise ValueError(f"{name} must have a strictly positive diagonal")
        object.__setattr__(self, 'F_G', F_G)
        object.__setattr__(self, 'F_D', F_D)

    @classmethod
    def from_diagonals(cls, f_g, f_d):
        return cls(np.diag(np.asarray(f_g, dtype=float)),
                   np.diag(np.asarray(f_d, dtype=float)))

    @property
    def n_producers(self):
        return self.F_G.shape[0]

    @property
    def F_M(self):
        """Bidiagonal equal-marginal-cost operator, shape (|G|-1, |G|)."""
        f = np.diag(self.F_G)
        g = len(f)
        FM = np.zeros((max(g - 1, 0), g))
        for i in range(g - 1):
            FM[i, i] = f[i]
            FM[i, i + 1] = -f[i + 1]
        return FM


@dataclass(frozen=True)
class EquilibriumPoint:
    T_star: np.ndarray
    hG_star: np.ndarray


def solve_dispatch(spec, load):
    """Economic dispatch with equal marginal cost.

    ``h_i = S / (F_i * sum_j 1/F_j)`` where ``S`` is the total load.
    """
    load = np.asarray(load, dtype=float).reshape(-1)
    f = np.diag(spec.F_G)
    S = float(np.sum(load))
    return S / (f * np.sum(1.0 / f))


def solve_temperature(cm, spec, hG_star, load):
    """Minimum-deviation temperature profile on the equilibrium line."""
    hG_star = np.asarray(hG_star, dtype=float).reshape(-1)
    load = np.asarray(load, dtype=float).reshape(-1)
    if spec.F_D.shape[0] != cm.n_T:
        raise DimensionMismatch(f"F_D is {spec.F_D.shape}, model has n_T={cm.n_T}")
    T0 = pinv(cm.A1) @ (cm.B1 @ hG_star - cm.B2 @ load)
    fd = np.diag(spec.F_D)
    z = -float(fd @ T0) / float(np.sum(fd))
    return EquilibriumPoint(T0 + z, hG_star.copy())


def solve_equilibrium(cm, spec, load):
    """Joint optimum of the dispatch and temperature problems."""
    return solve_temperature(cm, spec, solve_dispatch(spec, load), load)


def verify_optimality(spec, T, hG, cm, load):
    """Residuals ``(||F_M hG||, |1' F_D T|, ||A1 T - B1 hG + B2 hL||)``.

    The pair is optimal when all three are below ``TOL.kkt_residual``.
    """
    T = np.asarray(T, dtype=float).reshape(-1)
    hG = np.asarray(hG, dtype=float).reshape(-1)
    load = np.asarray(load, dtype=float).reshape(-1)
    FM = spec.F_M
    r_dispatch = float(np.linalg.norm(FM @ hG)) if FM.size else 0.0
    r_temp = abs(float(np.sum(spec.F_D @ T)))
    r_balance = float(np.linalg.norm(cm.A1 @ T - cm.B1 @ hG + cm.B2 @ load))
    return r_dispatch, r_temp, r_balance


def is_optimal(residuals, tol=None):
    tol = TOL.kkt_residual if tol is None else tol
    return all(r <= tol for r in residuals)
