import numpy as np
import pytest
from hypothesis import given, strategies as st

from dhsdeepo import deepo
from dhsdeepo.errors import RankDeficient, RankDeficientData
from dhsdeepo.lqr import DataBatch, LqrWeights, lqr_cost, model_lqr
from dhsdeepo.presets import bench3d_system


def bench_batch(seed, t=60, sigma_w=0.1, sigma_s=1.0, bw='Bw1'):
    """Closed-loop data from bench3d under the LQR gain plus exploration."""
    rng = np.random.default_rng(seed)
    sys = bench3d_system(bw)
    K0, _, _ = model_lqr(1.1 * sys.A, sys.B, sys.weights)
    X = np.zeros((t + 1, 3))
    U = np.zeros((t, 3))
    for k in range(t):
        U[k] = K0 @ X[k] + sigma_s * rng.standard_normal(3)
        X[k + 1] = sys.A @ X[k] + sys.B @ U[k] + sigma_w * sys.B_w @ rng.standard_normal(
            sys.B_w.shape[1])
    return sys, K0, DataBatch(X[:-1].T.copy(), U.T.copy(), X[1:].T.copy()), rng


def test_buffers_match_batch_moments():
    _, _, batch, _ = bench_batch(0)
    buf = deepo.buffers_from_batch(batch)
    D0 = batch.D0
    np.testing.assert_allclose(buf.Phi, D0 @ D0.T / batch.t)
    np.testing.assert_allclose(buf.Phi_inv @ buf.Phi, np.eye(6), atol=1e-10)
    np.testing.assert_allclose(buf.Xbar0, batch.X0 @ D0.T / batch.t)
    np.testing.assert_allclose(buf.S01, batch.X0 @ batch.X1.T / batch.t)


def test_buffers_reject_short_batches():
    _, _, batch, _ = bench_batch(0, t=5)
    with pytest.raises(RankDeficientData):
        deepo.buffers_from_batch(batch)


def test_rank_one_update_equals_recomputation():
    _, _, batch, rng = bench_batch(1, t=80)
    buf = deepo.buffers_from_batch(DataBatch(batch.X0[:, :30], batch.U0[:, :30],
                                             batch.X1[:, :30]))
    for k in range(30, 80):
        buf = deepo.rank1_update(buf, batch.U0[:, k], batch.X0[:, k], batch.X1[:, k])
    ref = deepo.buffers_from_batch(batch)
    assert buf.t == 80
    for name in ('Phi', 'Phi_inv', 'Xbar1', 'S11'):
        np.testing.assert_allclose(getattr(buf, name), getattr(ref, name), rtol=1e-9,
                                   atol=1e-11)
    assert buf.inverse_drift() < 1e-9
    assert buf.resync().inverse_drift() == 0.0


def test_lift_satisfies_constraints():
    sys, K0, batch, _ = bench_batch(2)
    buf = deepo.buffers_from_batch(batch)
    V = deepo.lift(buf, K0)
    np.testing.assert_allclose(buf.Xbar0 @ V, np.eye(3), atol=1e-10)
    np.testing.assert_allclose(deepo.recover_gain(buf, V), K0, atol=1e-10)


def test_noise_estimate_is_closed_loop_residual_covariance():
    _, K0, batch, _ = bench_batch(3)
    buf = deepo.buffers_from_batch(batch)
    V = deepo.lift(buf, K0)
    r = batch.X1 - (buf.Xbar1 @ V) @ batch.X0
    np.testing.assert_allclose(deepo.noise_cov_estimate(buf, V), r @ r.T / batch.t,
                               rtol=1e-9, atol=1e-12)


@given(st.integers(0, 2**31 - 1))
def test_projections(seed):
    rng = np.random.default_rng(seed)
    n, d = 3, 6
    X = rng.standard_normal((n, d))
    G = rng.standard_normal((d, n))
    P = deepo.project_tangent(G, X)
    np.testing.assert_allclose(X @ P, 0.0, atol=1e-10)
    np.testing.assert_allclose(deepo.project_tangent(P, X), P, atol=1e-10)
    # orthogonal: G - P lies in the row space of X
    assert abs(np.sum((G - P) * P)) <= 1e-9 * max(1.0, np.sum(G * G))
    V = deepo.affine_project(G, X)
    np.testing.assert_allclose(X @ V, np.eye(n), atol=1e-9)
    # nearest feasible point: V - G is orthogonal to the tangent space
    D = deepo.project_tangent(rng.standard_normal((d, n)), X)
    assert abs(np.sum((V - G) * D)) <= 1e-9 * max(1.0, np.linalg.norm(D) * np.linalg.norm(V - G))


def test_projection_rejects_rank_deficient_data():
    X = np.ones((2, 4))
    with pytest.raises(RankDeficient):
        deepo.project_tangent(np.zeros((4, 2)), X)


def test_surrogate_equals_true_cost_on_noise_free_data():
    sys, K0, batch, rng = bench_batch(4, sigma_w=0.0)
    buf = deepo.buffers_from_batch(batch)
    U = np.eye(3) * 0.7
    for _ in range(3):
        K = K0 + 0.02 * rng.standard_normal(K0.shape)
        V = deepo.lift(buf, K)
        J = deepo.surrogate_cost(buf, V, sys.weights, U)
        assert J == pytest.approx(lqr_cost(sys.A, sys.B, K, sys.weights, U), rel=1e-9)
        ev = deepo.evaluate(buf, V, sys.weights, U)
        assert ev.J == pytest.approx(ev.J_dual, rel=1e-9)


def test_gd_step_descends_and_stays_feasible():
    sys, K0, batch, _ = bench_batch(5)
    buf, pol = deepo.warm_start(batch, K0)
    U_hat = deepo.noise_cov_estimate(buf, pol.V)
    J0 = deepo.surrogate_cost(buf, pol.V, sys.weights, U_hat)
    new, info = deepo.gd_step(buf, pol, sys.weights, 1e-3)
    np.testing.assert_allclose(buf.Xbar0 @ new.V, np.eye(3), atol=1e-8)
    np.testing.assert_allclose(new.K, buf.Ubar0 @ new.V)
    assert info.J == pytest.approx(J0)
    assert deepo.surrogate_cost(buf, new.V, sys.weights, U_hat) < J0
    assert info.rho_next < 1
    same, info0 = deepo.gd_step(buf, pol, sys.weights, 0.0)
    np.testing.assert_allclose(same.K, K0, atol=1e-10)


def test_step_is_halved_until_stable():
    sys, K0, batch, _ = bench_batch(6)
    buf, pol = deepo.warm_start(batch, K0)
    _, info = deepo.gd_step(buf, pol, sys.weights, 1e6)
    assert info.halvings > 0 and info.eta < 1e6 and info.rho_next < 1


def test_adam_state_and_feasibility():
    sys, K0, batch, _ = bench_batch(7)
    buf, pol = deepo.warm_start(batch, K0)
    hyper = deepo.AdamHyper(eta0=1e-2)
    assert hyper.eta(4) == pytest.approx(5e-3)
    assert deepo.AdamHyper(eta0=1e-2, decay=False).eta(4) == 1e-2
    for _ in range(5):
        pol, info = deepo.adam_step(buf, pol, sys.weights, hyper)
        np.testing.assert_allclose(buf.Xbar0 @ pol.V, np.eye(3), atol=1e-8)
    assert pol.step == 5 and pol.adam_m.shape == pol.V.shape
    assert np.all(pol.adam_v >= 0)
    assert info.d_inv_min <= info.d_inv_max


def test_identity_mode_uses_unit_covariance():
    sys, K0, batch, _ = bench_batch(8)
    buf, pol = deepo.warm_start(batch, K0)
    _, info = deepo.gd_step(buf, pol, sys.weights, 1e-3, ueps_mode='identity')
    np.testing.assert_array_equal(info.U_eps_hat, np.eye(3))
    with pytest.raises(ValueError):
        deepo.gd_step(buf, pol, sys.weights, 1e-3, ueps_mode='other')


def test_warm_start_covariance_is_positive_definite():
    _, _, batch, _ = bench_batch(9, t=50)
    assert np.linalg.eigvalsh(deepo.buffers_from_batch(batch).Phi).min() > 0


def test_rank_one_special_samples():
    _, _, batch, _ = bench_batch(10)
    buf = deepo.buffers_from_batch(batch)
    t = buf.t
    zero = deepo.rank1_update(buf, np.zeros(3), np.zeros(3), np.zeros(3))
    np.testing.assert_allclose(zero.Phi, buf.Phi * t / (t + 1))
    np.testing.assert_allclose(zero.Phi_inv, np.linalg.inv(zero.Phi), rtol=1e-10)
    # a repeated sample is folded in like any other
    twice = deepo.rank1_update(deepo.rank1_update(buf, batch.U0[:, 0], batch.X0[:, 0],
                                                  batch.X1[:, 0]),
                               batch.U0[:, 0], batch.X0[:, 0], batch.X1[:, 0])
    phi = np.concatenate([batch.U0[:, 0], batch.X0[:, 0]])
    np.testing.assert_allclose(twice.Phi, (t * buf.Phi + 2 * np.outer(phi, phi)) / (t + 2))
    assert twice.inverse_drift() < 1e-10


def test_lifted_closed_loop_identity():
    sys, K0, batch, rng = bench_batch(11)
    buf = deepo.buffers_from_batch(batch)
    # rebuild the disturbance record: x1 - A x0 - B u0
    W0 = batch.X1 - sys.A @ batch.X0 - sys.B @ batch.U0
    Wbar0 = W0 @ batch.D0.T / batch.t
    K = K0 + 0.01 * rng.standard_normal(K0.shape)
    V = deepo.lift(buf, K)
    np.testing.assert_allclose((buf.Xbar1 - Wbar0) @ V, sys.A + sys.B @ K, atol=1e-8)


def test_noise_estimate_on_noise_free_data_is_input_excitation():
    sys, K0, _, _ = bench_batch(12)
    rng = np.random.default_rng(0)
    X0 = rng.standard_normal((3, 40))
    E = rng.standard_normal((3, 40))
    U0 = K0 @ X0 + E
    X1 = sys.A @ X0 + sys.B @ U0
    buf = deepo.buffers_from_batch(DataBatch(X0, U0, X1))
    V = deepo.lift(buf, K0)
    # without process noise the only residual is the excitation B (u - K x)
    ref = sys.B @ E @ E.T @ sys.B.T / 40
    np.testing.assert_allclose(deepo.noise_cov_estimate(buf, V), ref, atol=1e-10)


def test_surrogate_scaling():
    sys, K0, batch, _ = bench_batch(13)
    buf = deepo.buffers_from_batch(batch)
    V = deepo.lift(buf, K0)
    assert deepo.surrogate_cost(buf, V, sys.weights, np.zeros((3, 3))) == 0.0
    np.testing.assert_array_equal(deepo.gradient(buf, V, sys.weights, np.zeros((3, 3))), 0.0)
    U = deepo.noise_cov_estimate(buf, V)
    assert deepo.surrogate_cost(buf, V, sys.weights, 2.5 * U) == pytest.approx(
        2.5 * deepo.surrogate_cost(buf, V, sys.weights, U), rel=1e-12)


@given(st.integers(0, 2**31 - 1))
def test_projection_examples(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((3, 6))
    T = deepo.project_tangent(rng.standard_normal((6, 3)), X)
    np.testing.assert_allclose(deepo.project_tangent(T, X), T, atol=1e-10)
    np.testing.assert_allclose(deepo.project_tangent(X.T @ rng.standard_normal((3, 3)), X), 0.0,
                               atol=1e-9)
    G = rng.standard_normal((6, 3))
    P = deepo.project_tangent(G, X)
    assert np.sum(G * G) == pytest.approx(np.sum(P * P) + np.sum((G - P) ** 2), rel=1e-10)
    V0 = deepo.affine_project(np.zeros((6, 3)), X)
    np.testing.assert_allclose(V0, X.T @ np.linalg.inv(X @ X.T), atol=1e-10)
    np.testing.assert_allclose(deepo.affine_project(V0 + T, X), V0 + T, atol=1e-9)


def test_affine_projection_matches_constrained_least_squares(rng):
    X = rng.standard_normal((3, 6))
    Vt = rng.standard_normal((6, 3))
    # column-wise KKT system of min ||v - vt||^2 s.t. X v = e_j
    K = np.block([[np.eye(6), X.T], [X, np.zeros((3, 3))]])
    ref = np.column_stack([np.linalg.solve(K, np.concatenate([Vt[:, j], np.eye(3)[:, j]]))[:6]
                           for j in range(3)])
    np.testing.assert_allclose(deepo.affine_project(Vt, X), ref, atol=1e-9)


def noise_free_buffers(seed=14, t=60):
    sys = bench3d_system('Bw1')
    rng = np.random.default_rng(seed)
    K0, _, _ = model_lqr(1.1 * sys.A, sys.B, sys.weights)
    X0 = rng.standard_normal((3, t))
    U0 = K0 @ X0 + rng.standard_normal((3, t))
    X1 = sys.A @ X0 + sys.B @ U0
    return sys, K0, deepo.buffers_from_batch(DataBatch(X0, U0, X1))


def test_certainty_equivalence_optimum_is_stationary():
    sys, _, buf = noise_free_buffers()
    K_star = model_lqr(sys.A, sys.B, sys.weights)[0]
    V = deepo.lift(buf, K_star)
    np.testing.assert_allclose(deepo.recover_gain(buf, V), K_star, atol=1e-6)
    ev = deepo.evaluate(buf, V, sys.weights, np.eye(3))
    assert np.linalg.norm(deepo.project_tangent(ev.grad, buf.Xbar0)) <= 1e-6
    pol = deepo.PolicyState(K_star, V)
    new, _ = deepo.gd_step(buf, pol, sys.weights, 1e-3, ueps_mode='identity')
    np.testing.assert_allclose(new.K, K_star, atol=1e-8)
    np.testing.assert_array_equal(deepo.recover_gain(buf, np.zeros_like(V)), 0.0)


def test_monotone_descent_on_frozen_data():
    sys, K0, buf = noise_free_buffers()
    pol = deepo.PolicyState(K0, deepo.lift(buf, K0))
    J_prev = np.inf
    for _ in range(200):
        pol, info = deepo.gd_step(buf, pol, sys.weights, 1e-2, ueps_mode='identity')
        assert info.J <= J_prev * (1 + 1e-12)
        J_prev = info.J
        if info.grad_norm <= 1e-8:
            break
        np.testing.assert_allclose(buf.Xbar0 @ pol.V, np.eye(3), atol=1e-8)
    K_star = model_lqr(sys.A, sys.B, sys.weights)[0]
    assert np.linalg.norm(pol.K - K_star) < np.linalg.norm(K0 - K_star)


def test_adam_first_step_and_sign_reduction():
    sys, K0, batch, _ = bench_batch(15)
    buf, pol = deepo.warm_start(batch, K0)
    hyper = deepo.AdamHyper(eta0=1e-4)
    V = deepo.lift(buf, K0)
    ev = deepo.evaluate(buf, V, sys.weights, deepo.noise_cov_estimate(buf, V))
    g = deepo.project_tangent(ev.grad, buf.Xbar0)
    new, _ = deepo.adam_step(buf, pol, sys.weights, hyper)
    np.testing.assert_allclose(new.adam_m / (1 - hyper.beta1), g, rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(new.adam_v / (1 - hyper.beta2), g * g, rtol=1e-10, atol=1e-20)

    plain = deepo.AdamHyper(eta0=1e-4, beta1=0.0, beta2=0.0, epsilon=1e-8, decay=False)
    new, info = deepo.adam_step(buf, pol, sys.weights, plain)
    step = deepo.project_tangent(g / (np.abs(g) + 1e-8), buf.Xbar0)
    V_feas = deepo.affine_project(V, buf.Xbar0)
    assert info.halvings == 0
    np.testing.assert_allclose(new.V, V_feas - 1e-4 * step, atol=1e-10)
    lo = 1.0 / (new.grad_max + 1e-8)
    assert lo * (1 - 1e-9) <= info.d_inv_min <= info.d_inv_max <= 1e8


def test_converged_gd_matches_certainty_equivalence_gain():
    from dhsdeepo.lqr import ce_lqr, ls_identify
    sys, K0, buf = noise_free_buffers(16)
    rng = np.random.default_rng(16)
    X0 = rng.standard_normal((3, 60))
    U0 = K0 @ X0 + rng.standard_normal((3, 60))
    batch = DataBatch(X0, U0, sys.A @ X0 + sys.B @ U0)
    A_hat, B_hat, _ = ls_identify(batch)
    K_ce = ce_lqr(A_hat, B_hat, sys.weights)
    buf, pol = deepo.warm_start(batch, K0)
    for _ in range(3000):
        pol, info = deepo.gd_step(buf, pol, sys.weights, 2e-2, ueps_mode='identity')
        if info.grad_norm < 1e-10:
            break
    np.testing.assert_allclose(pol.K, K_ce, atol=1e-6)
