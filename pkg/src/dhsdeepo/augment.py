"""Optimality-error output and the incremental augmented system.

The augmented state is ``x_k = [T_k - T_{k-1}; e_{k-1}]`` and the input is
the generation increment ``u_k = hG_k - hG_{k-1}``. A zero equilibrium of
this system is exactly an economically optimal steady state.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .mathkit import kalman_rank


@dataclass(frozen=True)
class AugmentedSystem:
    A: np.ndarray
    B: np.ndarray
    B_w: np.ndarray
    C: np.ndarray
    D: np.ndarray
    C_T: np.ndarray
    D_T: np.ndarray
    ctrb_rank: int

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def n_T(self):
        return self.C_T.shape[1]

    @property
    def controllable(self):
        return self.ctrb_rank == self.n


def build_error_maps(spec, n_T):
    """Return ``(C_T, D_T)`` such that ``e = C_T T + D_T hG``.

    The first ``m - 1`` rows of ``e`` are marginal-cost differences and the
    last row is the weighted temperature sum ``1' F_D T``.
    """
    m = spec.n_producers
    if spec.F_D.shape[0] != n_T:
        raise DimensionMismatch(f"F_D has size {spec.F_D.shape[0]}, expected n_T={n_T}")
    C_T = np.zeros((m, n_T))
    C_T[-1, :] = np.diag(spec.F_D)
    D_T = np.zeros((m, m))
    D_T[:m - 1, :] = spec.F_M
    return C_T, D_T


def build_augmented(dm, C_T, D_T):
    n_T = dm.A_T.shape[0]
    m = dm.B_T.shape[1]
    if C_T.shape != (m, n_T) or D_T.shape != (m, m):
        raise DimensionMismatch(
            f"C_T {C_T.shape} / D_T {D_T.shape} incompatible with n_T={n_T}, m={m}")
    n_L = dm.B_T_L.shape[1]
    A = np.block([[dm.A_T, np.zeros((n_T, m))],
                  [C_T, np.eye(m)]])
    B = np.vstack([dm.B_T, D_T])
    B_w = np.vstack([dm.B_T_L, np.zeros((m, n_L))])
    C = np.hstack([C_T, np.eye(m)])
    return AugmentedSystem(A, B, B_w, C, D_T.copy(), C_T.copy(), D_T.copy(),
                           kalman_rank(A, B))


def error_output(C_T, D_T, T, hG):
    return C_T @ np.asarray(T, dtype=float) + D_T @ np.asarray(hG, dtype=float)


def physical_from_augmented(x_traj, u_traj, T_prev, hG_prev):
    """Rebuild temperatures and generation from augmented increments.

    ``x_traj[k]`` holds ``[T_k - T_{k-1}; e_{k-1}]`` and ``u_traj[k]`` the
    increment applied at step k. ``T_prev``/``hG_prev`` are the values just
    before the first sample. Returns ``T_traj[k] = T_k`` and
    ``hG_traj[k] = hG_k``.
    """
    x_traj = np.atleast_2d(np.asarray(x_traj, dtype=float))
    u_traj = np.atleast_2d(np.asarray(u_traj, dtype=float))
    T_prev = np.asarray(T_prev, dtype=float).reshape(-1)
    hG_prev = np.asarray(hG_prev, dtype=float).reshape(-1)
    n_T = T_prev.size
    T_traj = T_prev + np.cumsum(x_traj[:, :n_T], axis=0)
    hG_traj = hG_prev + np.cumsum(u_traj, axis=0)
    return T_traj, hG_traj


@dataclass(frozen=True)
class EquilibriumReport:
    temperature_gap: float
    generation_gap: float
    error_norm: float
    window: int

    def within(self, tol):
        return max(self.temperature_gap, self.generation_gap, self.error_norm) <= tol


def check_equilibrium(T_traj, hG_traj, e_traj, eq, window=500):
    """Windowed-mean distance of a trajectory to the optimum ``eq``.

    Averages over the last ``window`` samples, or all of them if the run
    is shorter.
    """
    if window < 1:
        raise ValueError("window must be positive")
    T = np.atleast_2d(np.asarray(T_traj, dtype=float))[-window:]
    hG = np.atleast_2d(np.asarray(hG_traj, dtype=float))[-window:]
    e = np.atleast_2d(np.asarray(e_traj, dtype=float))[-window:]
    return EquilibriumReport(
        float(np.linalg.norm(T.mean(axis=0) - eq.T_star)),
        float(np.linalg.norm(hG.mean(axis=0) - eq.hG_star)),
        float(np.linalg.norm(e.mean(axis=0))),
        T.shape[0],
    )
