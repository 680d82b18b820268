import numpy as np
import pytest

from dhsdeepo.baselines import (MpcConfig, ZopoConfig, mpc_gain, rollout_cost, zopo_gradient,
                                zopo_run)
from dhsdeepo.lqr import LqrWeights, lqr_cost, model_lqr, policy_gradient
from dhsdeepo.presets import bench3d_system


@pytest.fixture
def bench():
    s = bench3d_system('Bw1')
    U = 0.01 * s.B_w @ s.B_w.T + np.eye(3)
    K0 = model_lqr(1.5 * s.A, s.B, s.weights)[0]
    return s, U, K0


def test_config_validation():
    assert ZopoConfig().samples_per_update == 3000
    with pytest.raises(ValueError):
        ZopoConfig(radius=0.0)
    with pytest.raises(ValueError):
        ZopoConfig(n_dir=0)
    with pytest.raises(ValueError):
        MpcConfig(horizon=0)


def test_rollout_cost_manual_sum(rng):
    A = np.array([[0.5, 0.1], [0.0, 0.3]])
    B = np.eye(2)
    K = -0.1 * np.eye(2)
    w = LqrWeights(np.diag([1.0, 2.0]), np.eye(2))
    eps = rng.standard_normal((7, 2))
    x = np.zeros(2)
    total = 0.0
    for e in eps:
        x = (A + B @ K) @ x + e
        total += x @ (w.Q + K.T @ w.R @ K) @ x
    assert rollout_cost(A, B, K, w, eps) == pytest.approx(total / 7)
    assert rollout_cost(A, B, np.eye(2), w, eps) == np.inf


def test_rollout_cost_is_unbiased_for_long_horizons(bench, rng):
    s, U, K0 = bench
    L = np.linalg.cholesky(U)
    eps = rng.standard_normal((200000, 3)) @ L.T
    c = rollout_cost(s.A, s.B, K0, s.weights, eps)
    assert c == pytest.approx(lqr_cost(s.A, s.B, K0, s.weights, U), rel=0.02)


def test_zeroth_order_gradient_aligns_with_exact_gradient(bench):
    s, U, K0 = bench
    g = policy_gradient(s.A, s.B, K0, s.weights, U)
    est = zopo_gradient(K0, s.A, s.B, U, s.weights, ZopoConfig(n_dir=50, rollout_len=500),
                        np.random.default_rng(0))
    cos = np.sum(g * est) / (np.linalg.norm(g) * np.linalg.norm(est))
    assert cos > 0.9


def test_zeroth_order_run_reduces_cost(bench):
    s, U, K0 = bench
    cfg = ZopoConfig(n_dir=10, rollout_len=150, stepsize=1e-3)
    K, trace = zopo_run(s.A, s.B, U, K0, s.weights, cfg, 30 * cfg.samples_per_update,
                        np.random.default_rng(1))
    assert trace[0][0] == 0 and trace[-1][0] == 30 * cfg.samples_per_update
    assert trace[-1][1] < trace[0][1]
    assert len(trace) == 31


def test_mpc_with_riccati_terminal_cost_is_lqr(bench):
    s, _, _ = bench
    K_star = model_lqr(s.A, s.B, s.weights)[0]
    np.testing.assert_allclose(mpc_gain(s.A, s.B, s.weights, MpcConfig(5)), K_star, atol=1e-8)


def test_mpc_short_horizon_from_zero_terminal_cost(bench):
    s, _, _ = bench
    w = s.weights
    K1 = mpc_gain(s.A, s.B, w, MpcConfig(1), P_terminal=np.zeros((3, 3)))
    np.testing.assert_allclose(K1, np.zeros((3, 3)))
    K2 = mpc_gain(s.A, s.B, w, MpcConfig(2), P_terminal=np.zeros((3, 3)))
    ref = -np.linalg.solve(w.R + s.B.T @ w.Q @ s.B, s.B.T @ w.Q @ s.A)
    np.testing.assert_allclose(K2, ref, atol=1e-12)


class _FlippedDirections:
    """Generator proxy that negates every search direction draw."""

    def __init__(self, seed, shape):
        self._rng = np.random.default_rng(seed)
        self._shape = shape

    def standard_normal(self, shape):
        z = self._rng.standard_normal(shape)
        return -z if tuple(shape) == self._shape else z


def test_zeroth_order_estimator_is_even_in_the_direction(bench):
    s, U, K0 = bench
    cfg = ZopoConfig(n_dir=4, rollout_len=50)
    g = zopo_gradient(K0, s.A, s.B, U, s.weights, cfg, np.random.default_rng(3))
    g_flip = zopo_gradient(K0, s.A, s.B, U, s.weights, cfg, _FlippedDirections(3, K0.shape))
    np.testing.assert_allclose(g_flip, g, rtol=1e-12, atol=1e-12)


def test_zeroth_order_budget_below_one_update(bench):
    s, U, K0 = bench
    cfg = ZopoConfig(n_dir=2, rollout_len=10)
    K, trace = zopo_run(s.A, s.B, U, K0, s.weights, cfg, cfg.samples_per_update - 1,
                        np.random.default_rng(0))
    np.testing.assert_array_equal(K, K0)
    assert trace == [(0, lqr_cost(s.A, s.B, K0, s.weights, U, check_duality=False))]


def test_mpc_cost_equals_lqr_cost(bench):
    s, U, _ = bench
    K_star = model_lqr(s.A, s.B, s.weights)[0]
    K = mpc_gain(s.A, s.B, s.weights, MpcConfig(20))
    c_mpc = lqr_cost(s.A, s.B, K, s.weights, U)
    assert c_mpc == pytest.approx(lqr_cost(s.A, s.B, K_star, s.weights, U), rel=1e-8)
