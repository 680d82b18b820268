"""Numerical tolerances shared by the solvers and the test-suite."""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    # Lyapunov
    lyap_residual: float = 1e-10
    symmetry: float = 1e-10
    schur_margin: float = 1e-12
    kron_max_n: int = 8

    # Riccati value iteration
    dare_rel_change: float = 1e-13
    dare_max_iter: int = 100_000
    dare_max_norm: float = 1e12
    dare_residual: float = 1e-9

    # rank decisions
    kalman_rank_rel: float = 1e-8

    # dispatch / equilibrium
    kkt_residual: float = 1e-8
    flow_balance: float = 1e-10

    # online learning
    constraint: float = 1e-8
    reject_margin: float = 1e-6
    phi_recheck_every: int = 1000

    # closed loop
    divergence_cap: float = 1e9


TOL = Tolerances()
