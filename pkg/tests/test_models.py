"""Model zoo: simulation, observation densities, conjugate updates and the
intractability guard."""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.linalg import solve_discrete_lyapunov
from scipy.special import gammaln

from rejuvsmc.bridge import LinearGaussianDynamics, kalman_filter
from rejuvsmc.core import IntractableTransition, make_rng
from rejuvsmc.models import (
    ArSsmSpec,
    LgssmSpec,
    Lorenz63Spec,
    TrackingSpec,
    ar_observation_logdensity,
    lorenz_transition_sample,
    paper_ar5,
    scalar_lgssm,
    simulate_data,
    tracking_theta_conditional,
)


class TestSimulateData:
    def test_zero_noise_identity_dynamics_constant_path(self):
        model = LgssmSpec(
            dynamics=LinearGaussianDynamics(np.eye(2), np.zeros((2, 2))),
            obs_matrix=np.eye(2),
            obs_cov=1e-30 * np.eye(2),
            init_mean=np.array([1.0, -2.0]),
            init_cov=np.zeros((2, 2)),
        )
        states, obs = simulate_data(model, 5, make_rng(0))
        np.testing.assert_allclose(states, np.tile([1.0, -2.0], (5, 1)))
        np.testing.assert_allclose(obs, states, atol=1e-12)

    def test_ar5_stationary_variance_matches_lyapunov(self):
        spec = paper_ar5()
        rng = make_rng(1)
        states, _ = simulate_data(spec, 100_000, rng)
        target = solve_discrete_lyapunov(spec.dynamics.a, spec.dynamics.process_cov)
        emp_var = states[:, 0].var()
        assert abs(emp_var / target[0, 0] - 1) < 0.05

    def test_lorenz_origin_fixed_point(self):
        spec = Lorenz63Spec(noise_std=np.zeros(3))
        states, _ = simulate_data(spec, 3, make_rng(2))
        # the drift vanishes at the origin only; force the start there
        x = np.zeros((1, 3))
        out = lorenz_transition_sample(spec, x, make_rng(3))
        np.testing.assert_array_equal(out, np.zeros((1, 3)))

    def test_shapes(self):
        spec = TrackingSpec()
        states, obs = simulate_data(spec, 7, make_rng(4))
        assert states.shape == (7, 6)
        assert obs.shape == (7, 3)


class TestArObservation:
    def test_at_the_mean(self):
        spec = paper_ar5()
        x = np.zeros(5)
        # log t_nu(0) - log sigma_e
        nu = spec.nu
        expected = (
            gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * np.log(nu * np.pi) - np.log(spec.sigma_e)
        )
        assert ar_observation_logdensity(spec, 0.0, x) == pytest.approx(expected, abs=1e-12)

    def test_paper_parameter_point(self):
        # beta=0.5, sigma_e=0.5, nu=3, y=0, x1=0: log t_3(0) - log 0.5
        spec = ArSsmSpec(alpha=[0.5], beta=0.5, sigma_e=0.5, nu=3.0)
        expected = float(
            gammaln(2.0) - gammaln(1.5) - 0.5 * np.log(3 * np.pi) - np.log(0.5)
        )
        assert ar_observation_logdensity(spec, 0.0, np.zeros(1)) == pytest.approx(expected, abs=1e-12)

    def test_small_beta_linear_limit(self):
        spec = ArSsmSpec(alpha=[0.5], beta=1e-6, sigma_e=0.7, nu=4.0)
        x = np.array([1.3])
        lin = ArSsmSpec(alpha=[0.5], beta=1e-6, sigma_e=0.7, nu=4.0)
        # compare against the linear-observation formula directly
        z = (0.4 - 1.3) / 0.7
        nu = 4.0
        expected = (
            gammaln((nu + 1) / 2)
            - gammaln(nu / 2)
            - 0.5 * np.log(nu * np.pi)
            - 0.5 * (nu + 1) * np.log1p(z * z / nu)
            - np.log(0.7)
        )
        assert ar_observation_logdensity(spec, 0.4, x) == pytest.approx(expected, abs=1e-6)

    def test_density_integrates_to_one(self):
        spec = paper_ar5()
        x = np.array([0.7, 0, 0, 0, 0])
        val, _ = quad(
            lambda y: np.exp(ar_observation_logdensity(spec, y, x)), -60, 60, limit=400
        )
        assert val == pytest.approx(1.0, abs=1e-3)

    def test_degenerate_transition_rank(self):
        spec = paper_ar5()
        assert np.linalg.matrix_rank(spec.dynamics.process_cov) == 1


class TestLorenz:
    def test_deterministic_euler_step(self):
        # one noiseless substep from (1,1,1): drift (0, 26, 1 - 8/3)
        spec = Lorenz63Spec(noise_std=np.zeros(3), substeps=1)
        out = lorenz_transition_sample(spec, np.ones((1, 3)), make_rng(5))
        drift = np.array([0.0, 26.0, 1.0 - 8.0 / 3.0])
        np.testing.assert_allclose(out[0], np.ones(3) + 0.01 * drift, atol=1e-14)

    def test_substep_noise_variance(self):
        # at a drift-free point the one-substep variance is sigma^2 * h
        spec = Lorenz63Spec(substeps=1)
        rng = make_rng(6)
        xs = np.zeros((1_000_000, 3))
        out = lorenz_transition_sample(spec, xs, rng)
        # at the origin the drift is zero, so the update is pure noise
        var = out.var(axis=0)
        np.testing.assert_allclose(var, 5.0 * 0.01, rtol=0.01)

    def test_transition_density_refused(self):
        spec = Lorenz63Spec()
        with pytest.raises(IntractableTransition):
            spec.transition_logpdf(np.zeros((1, 3)), np.zeros((1, 3)))
        assert spec.has_transition_density is False

    def test_observation_density_proper(self):
        spec = Lorenz63Spec()
        x = np.array([[0.3, 1.0, 2.0]])
        grid = np.linspace(-10, 10, 4001)
        vals = np.array([np.exp(spec.observation_logpdf(np.array([g]), x))[0] for g in grid])
        assert np.trapezoid(vals, grid) == pytest.approx(1.0, abs=1e-3)


class TestTracking:
    def test_theta_conditional_prior_for_single_state(self):
        spec = TrackingSpec(theta=0.05)
        rng = make_rng(7)
        draws = np.array(
            [tracking_theta_conditional(spec, np.zeros((1, 6)), rng) for _ in range(50_000)]
        )
        # inverse-gamma(1,1) prior: median = 1/log(2)
        assert np.median(draws) == pytest.approx(1 / np.log(2), rel=0.05)

    def test_theta_conditional_matches_grid_integration(self):
        # T=5 path: conditional density vs quadrature on a grid, TV < 0.01
        spec = TrackingSpec(theta=0.05)
        rng = make_rng(8)
        states, _ = simulate_data(spec, 5, rng)
        draws = np.array(
            [tracking_theta_conditional(spec, states, rng) for _ in range(200_000)]
        )
        from rejuvsmc.models import _cv_matrices

        a, q = _cv_matrices(spec.dt)
        innov = states[1:] - states[:-1] @ a.T
        quad_form = float(np.sum(innov.T * np.linalg.solve(q, innov.T)))

        def log_post(theta):
            # IG(1,1) prior x N(0, theta q) likelihood over 4 transitions
            return (
                -2.0 * np.log(theta)
                - 1.0 / theta
                - 12.0 * np.log(theta)
                - quad_form / (2 * theta)
            )

        grid = np.linspace(draws.min(), np.quantile(draws, 0.9999), 3000)
        logp = np.array([log_post(g) for g in grid])
        pdf = np.exp(logp - logp.max())
        pdf /= np.trapezoid(pdf, grid)
        cdf_grid = np.cumsum(pdf) * (grid[1] - grid[0])
        emp_cdf = np.searchsorted(np.sort(draws), grid) / draws.size
        assert np.max(np.abs(cdf_grid - emp_cdf)) < 0.01

    def test_theta_posterior_concentrates(self):
        # 95% central interval covers the generating value in >= 90% of runs
        rng = make_rng(9)
        hits = 0
        reps = 100
        for _ in range(reps):
            true_theta = 0.1
            spec = TrackingSpec(theta=true_theta)
            states, _ = simulate_data(spec, 60, rng)
            draws = np.array(
                [tracking_theta_conditional(spec, states, rng) for _ in range(400)]
            )
            lo, hi = np.quantile(draws, [0.025, 0.975])
            hits += lo <= true_theta <= hi
        assert hits >= 90

    def test_small_theta_near_degenerate(self):
        spec = TrackingSpec(theta=1e-8)
        rng = make_rng(10)
        x = spec.initial_sample(1, rng)
        nxt = spec.transition_sample(x, rng)
        np.testing.assert_allclose(nxt, x @ spec.dynamics.a.T, atol=1e-3)

    def test_sensor_angles_and_range(self):
        spec = TrackingSpec()
        x = np.array([[3.0, 4.0, 0.0, 0, 0, 0]])
        mean = spec.sensor_mean(x)[0]
        assert mean[0] == pytest.approx(np.arctan2(4, 3))
        assert mean[1] == pytest.approx(0.0)
        assert mean[2] == pytest.approx(5.0)


class TestLgssmOracleAgainstFilter:
    def test_loglik_matches_direct_formula(self):
        model = scalar_lgssm(a=0.7, sigma_v=0.8, sigma_e=0.6)
        rng = make_rng(11)
        _, ys = simulate_data(model, 4, rng)
        res = kalman_filter(model, ys)
        # brute-force likelihood via the joint Gaussian of the observations
        horizon = 4
        a = 0.7
        var0 = 0.8**2 / (1 - 0.49)
        cov_x = np.empty((horizon, horizon))
        for i in range(horizon):
            for j in range(horizon):
                lag = abs(i - j)
                cov_x[i, j] = a**lag * var0
        cov_y = cov_x + 0.36 * np.eye(horizon)
        resid = ys[:, 0]
        chol = np.linalg.cholesky(cov_y)
        alpha = np.linalg.solve(chol, resid)
        ll = -0.5 * (alpha @ alpha + 2 * np.log(np.diag(chol)).sum() + horizon * np.log(2 * np.pi))
        assert res.log_likelihood == pytest.approx(ll, abs=1e-9)
