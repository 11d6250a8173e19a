import numpy as np
import pytest
from scipy.linalg import solve_discrete_are

from conftest import dyn_from, random_stable
from gfmrisk.control import (
    CostWeights,
    UnstabilizableError,
    dare_baseline,
    is_stabilizing,
    lqr_cost_analytic,
    lqr_cost_mc,
    spectral_radius,
    stationary_stats,
    window_stats,
)
from gfmrisk.noise import NoiseModel

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0  # scalar DARE gain for a = b = q = r = 1


def scalar_weights(q=1.0, r=1.0):
    return CostWeights(np.array([[q]]), np.array([[r]]))


class TestStability:
    def test_open_loop(self):
        assert is_stabilizing(np.zeros((1, 1)), dyn_from(0.9)) == (True, pytest.approx(0.9))

    def test_feedback(self):
        chk = is_stabilizing(np.array([[0.6]]), dyn_from(1.5, 1.0))
        assert chk.stable and chk.rho == pytest.approx(0.9)

    def test_unstable(self):
        assert not is_stabilizing(np.zeros((1, 1)), dyn_from(1.0)).stable

    def test_power_iteration(self):
        rng = np.random.default_rng(1)
        S = rng.standard_normal((6, 6))
        A = S @ S.T / 20.0  # symmetric, so power iteration converges to |lambda|_max
        v = np.ones(6)
        for _ in range(5000):
            v = A @ v
            v /= np.linalg.norm(v)
        assert spectral_radius(A) == pytest.approx(np.linalg.norm(A @ v), abs=1e-8)


class TestWeights:
    def test_default_layout(self, toy):
        W = toy.weights
        L = toy.layout
        assert W.R.shape == (L.n_input, L.n_input)
        assert W.Q.shape == (L.n_state, L.n_state)

    def test_validation(self):
        with pytest.raises(ValueError):
            CostWeights(np.array([[-1.0]]), np.eye(1))
        with pytest.raises(ValueError):
            CostWeights(np.eye(1), np.zeros((1, 1)))


class TestAnalyticCost:
    def test_scalar_lyapunov(self):
        noise = NoiseModel.gaussian([0.0], [[1.0]])
        assert lqr_cost_analytic(np.zeros((1, 1)), dyn_from(0.5), scalar_weights(), noise) == pytest.approx(4 / 3)

    def test_white_noise_with_mean(self):
        noise = NoiseModel.gaussian([0.3], [[0.5]])
        assert lqr_cost_analytic(np.zeros((1, 1)), dyn_from(0.0), scalar_weights(), noise) == pytest.approx(0.59)

    def test_zero_noise(self, toy):
        dyn = toy.system.discrete
        assert lqr_cost_analytic(_k0(toy), dyn, toy.weights, NoiseModel.zero(dyn.n_state)) == 0.0

    def test_unstable_is_inf(self):
        noise = NoiseModel.gaussian([0.0], [[1.0]])
        assert lqr_cost_analytic(np.zeros((1, 1)), dyn_from(1.2), scalar_weights(), noise) == np.inf

    def test_step_offset(self):
        # constant offset d ~ U(-1, 1): stationary x = d / (1 - a), E[x^2] = 1/3 / (1-a)^2
        noise = NoiseModel(1, cov=np.zeros((1, 1)), step_map=np.ones((1, 1)), step_level=1.0)
        assert lqr_cost_analytic(np.zeros((1, 1)), dyn_from(0.5), scalar_weights(), noise) == pytest.approx(4 / 3)


def _k0(cm):
    from gfmrisk.optimizer import find_initial_policy
    return find_initial_policy(cm.system.discrete, cm.mask)


class TestMonteCarlo:
    def test_horizon_bias_decays(self):
        dyn, noise = dyn_from(0.9), NoiseModel.gaussian([0.0], [[1.0]])
        exact = lqr_cost_analytic(np.zeros((1, 1)), dyn, scalar_weights(), noise)
        errs = [abs(lqr_cost_mc(np.zeros((1, 1)), dyn, scalar_weights(), noise, T=T, rollouts=2000).mean - exact)
                for T in (20, 2000)]
        assert errs[1] < errs[0]

    def test_divergence_penalty(self):
        est = lqr_cost_mc(np.zeros((1, 1)), dyn_from(2.0), scalar_weights(), NoiseModel.gaussian([0.0], [[1.0]]),
                          T=100, rollouts=4, penalty=7.0)
        assert est.n_diverged == 4 and est.mean == 7.0

    def test_deterministic(self):
        dyn, noise = dyn_from(0.7), NoiseModel.gaussian([0.0], [[1.0]])
        a = lqr_cost_mc(np.zeros((1, 1)), dyn, scalar_weights(), noise, T=50, rollouts=10, seed=3)
        b = lqr_cost_mc(np.zeros((1, 1)), dyn, scalar_weights(), noise, T=50, rollouts=10, seed=3)
        assert a == b


class TestMoments:
    def test_stationary_mean(self):
        st = stationary_stats(np.array([[0.5]]), np.array([1.0]), np.zeros((1, 1)))
        assert st.mu[0] == pytest.approx(2.0)

    def test_window_single_step(self):
        # x_1 = mean + d + e
        st = window_stats(np.array([[0.5]]), np.array([1.0]), np.array([[2.0]]), np.array([[3.0]]), 1)
        assert st.mu[0] == pytest.approx(1.0)
        assert st.second[0, 0] == pytest.approx(1.0 + 2.0 + 3.0)

    def test_window_converges_to_stationary(self):
        rng = np.random.default_rng(0)
        dyn = random_stable(rng, 3, rho=0.5)
        W = np.eye(3)
        st = stationary_stats(dyn.A, np.zeros(3), W)
        wn = window_stats(dyn.A, np.zeros(3), W, None, 20_000)
        np.testing.assert_allclose(wn.second, st.second, rtol=1e-3)

    def test_window_matches_simulation(self):
        rng = np.random.default_rng(2)
        dyn = random_stable(rng, 3, rho=0.8)
        noise = NoiseModel.gaussian([0.1, 0.0, -0.2], 0.5 * np.eye(3), step_map=np.eye(3)[:, :1], step_level=1.0)
        T = 40
        wn = window_stats(dyn.A, noise.mean, noise.cov, noise.step_second_moment, T)
        from gfmrisk.simulate import linear_rollouts
        x = linear_rollouts(dyn, np.zeros((1, 3)), noise, T, 20_000, seed=1).x[:, 1:]
        second = np.einsum("rti,rtj->ij", x, x) / (x.shape[0] * T)
        np.testing.assert_allclose(second, wn.second, atol=0.05 * np.abs(wn.second).max())

    def test_window_rejects_zero(self):
        with pytest.raises(ValueError):
            window_stats(np.eye(1), np.zeros(1), np.eye(1), None, 0)


class TestDare:
    def test_scalar(self):
        K = dare_baseline(dyn_from(1.0, 1.0), scalar_weights())
        assert K[0, 0] == pytest.approx(GOLDEN, rel=1e-10)
        assert K[0, 0] == pytest.approx(0.618, abs=1e-3)

    def test_no_input_stable(self):
        K = dare_baseline(dyn_from(0.5, 0.0), scalar_weights())
        assert K[0, 0] == pytest.approx(0.0, abs=1e-14)

    def test_unstabilizable(self):
        with pytest.raises(UnstabilizableError):
            dare_baseline(dyn_from(1.5, 0.0), scalar_weights())

    def test_matches_scipy(self):
        rng = np.random.default_rng(5)
        dyn = random_stable(rng, 5, m=2, rho=1.1)
        W = CostWeights(np.diag(rng.uniform(0.5, 2, 5)), np.diag(rng.uniform(0.5, 2, 2)))
        P = solve_discrete_are(dyn.A, dyn.B, W.Q, W.R)
        K_ref = np.linalg.solve(W.R + dyn.B.T @ P @ dyn.B, dyn.B.T @ P @ dyn.A)
        np.testing.assert_allclose(dare_baseline(dyn, W), K_ref, rtol=1e-8, atol=1e-10)

    def test_optimal_among_perturbations(self):
        rng = np.random.default_rng(6)
        dyn = random_stable(rng, 4, m=2, rho=1.05)
        W = CostWeights(np.eye(4), np.eye(2))
        noise = NoiseModel.gaussian(np.zeros(4), np.eye(4))
        K = dare_baseline(dyn, W)
        best = lqr_cost_analytic(K, dyn, W, noise)
        for _ in range(100):
            assert lqr_cost_analytic(K + 0.05 * rng.standard_normal(K.shape), dyn, W, noise) >= best - 1e-9
