import math

import numpy as np
import pytest

from paramest.numcore import TimeGrid
from paramest.lre import CallableLre, LreData
from paramest.interlaced import InterlacedConfig, run_estimator
from paramest.nlpre import (
    MonotoneMap,
    NlpreConfig,
    check_p_monotone,
    identity_map,
    lyapunov_decrement,
    overparam_sinusoid_map,
    recover_frequency,
    run_nlpre,
)


class TestMonotonicity:
    def test_overparam_map_is_exactly_certified(self):
        m = overparam_sinusoid_map()
        ok, rho_hat = check_p_monotone(m, [-10.0, -10.0], [10.0, 10.0], n_samples=400)
        assert ok
        assert rho_hat == 1.0
        # the symmetrized Jacobian is exactly twice the identity everywhere
        for th in ([0.0, 0.0], [3.0, -7.0], [100.0, 0.01]):
            sym = m.P @ m.jacobian(np.array(th))
            assert np.array_equal(sym + sym.T, 2.0 * np.eye(2))

    def test_identity_map(self):
        m = identity_map(3)
        ok, rho_hat = check_p_monotone(m, -np.ones(3), np.ones(3), n_samples=200)
        assert ok and rho_hat == pytest.approx(1.0, abs=1e-12)

    def test_cubic_fails_near_zero(self):
        m = MonotoneMap(
            1, 1,
            lambda th: np.array([th[0] ** 3]),
            lambda th: np.array([[3.0 * th[0] ** 2]]),
            np.eye(1), rho=1.0,
        )
        ok, rho_hat = check_p_monotone(m, [-1.0], [1.0], n_samples=500)
        assert not ok
        assert rho_hat < 1.0  # quotient a^2+ab+b^2 collapses near the origin

    def test_validation(self):
        with pytest.raises(ValueError):
            MonotoneMap(3, 2, None, None, np.zeros((3, 2)), 1.0)
        with pytest.raises(ValueError):
            check_p_monotone(identity_map(1), [-1], [1], n_samples=0)


class TestEstimator:
    def test_identity_map_reduces_to_linear_estimator(self):
        theta = np.array([1.2, -0.4])
        phi_fn = lambda t: np.array([1.0, math.sin(2 * t)])
        grid = TimeGrid(h=1e-3, n_steps=3000)
        lre = CallableLre(phi_fn, theta)
        lin_cfg = InterlacedConfig(q=2, gamma=5.0, gamma_g=3.0, theta_g0=np.array([0.3, -0.1]))
        lin = run_estimator(lre, lin_cfg, grid)
        nl_cfg = NlpreConfig(identity_map(2), gamma=5.0, gamma_g=3.0, theta_g0=np.array([0.3, -0.1]))
        nl = run_nlpre(lre.sample(grid), nl_cfg, theta_true=theta)
        assert np.max(np.abs(nl.theta - lin.theta)) <= 1e-10
        assert np.max(np.abs(nl.Delta - lin.Delta)) <= 1e-10

    def test_zero_regressor_freezes(self):
        m = overparam_sinusoid_map()
        cfg = NlpreConfig(m, gamma=150.0, gamma_g=0.9, theta0=np.array([0.2, 0.4]))
        grid = TimeGrid(h=1e-2, n_steps=200)
        data = LreData(grid, "ct", np.zeros((201, 3)), np.zeros(201))
        run = run_nlpre(data, cfg)
        assert np.all(run.theta == np.array([0.2, 0.4]))
        assert np.all(run.Delta == 0.0)

    def test_monotone_decrease_of_error(self):
        theta = np.array([1.0, 0.5])
        m = overparam_sinusoid_map()
        phi_fn = lambda t: np.array([1.0, math.sin(t), math.cos(0.5 * t)])
        y_fn = lambda t: phi_fn(t) @ m.evaluate(theta)
        grid = TimeGrid(h=1e-3, n_steps=4000)
        data = LreData(
            grid, "ct",
            np.array([phi_fn(t) for t in grid.times()]),
            np.array([y_fn(t) for t in grid.times()]),
        )
        cfg = NlpreConfig(m, gamma=20.0, gamma_g=2.0, theta0=np.array([0.0, 0.0]))
        run = run_nlpre(data, cfg, theta_true=theta)
        u = 0.5 * run.err_norm**2
        assert np.all(np.diff(u) <= 1e-8)

    def test_mixed_identity_under_noiseless_data(self):
        # Y(t) = Delta(t) S(theta) residual stays small along the run
        theta = np.array([2.0, 0.25])
        m = overparam_sinusoid_map()
        s_true = m.evaluate(theta)
        phi_fn = lambda t: np.array([1.0, math.sin(t), math.cos(0.5 * t)])
        grid = TimeGrid(h=1e-3, n_steps=3000)
        phi = np.array([phi_fn(t) for t in grid.times()])
        data = LreData(grid, "ct", phi, phi @ s_true)
        cfg = NlpreConfig(m, gamma=10.0, gamma_g=1.5)
        run = run_nlpre(data, cfg, theta_true=theta)
        # recompute Y from the recorded state via a fresh pass
        from paramest.interlaced import mixed_quantities
        from paramest.nlpre import NlpreState

        state = NlpreState.initial(cfg)
        worst = 0.0
        from paramest.nlpre import nlpre_step

        for k in range(800):
            _, Delta, Y = mixed_quantities(state.theta_g, state.Phi, cfg.theta_g0)
            worst = max(worst, np.max(np.abs(Y - Delta * s_true)))
            state = nlpre_step(state, phi[k], (phi @ s_true)[k], k * grid.h, grid.h, cfg)
        assert worst <= 1e-6

    def test_frequency_recovery_guard(self):
        assert recover_frequency(0.04) == pytest.approx(5.0)
        assert math.isnan(recover_frequency(0.0))


class TestLyapunovDecrement:
    def test_constant_when_delta_zero(self):
        err = np.tile(np.array([1.0, -2.0]), (50, 1))
        ok, worst = lyapunov_decrement(err, np.zeros(50), 1.0, 150.0, 1e-3)
        assert ok and worst == 0.0

    def test_scalar_closed_form(self):
        # identity map, phi = 1, gamma_g = 1: Delta = 1 - e^-t and
        # U(t) = U(0) exp(-2 gamma int Delta^2)
        theta = np.array([3.0])
        grid = TimeGrid(h=1e-3, n_steps=3000)
        lre = CallableLre(lambda t: np.array([1.0]), theta)
        cfg = NlpreConfig(identity_map(1), gamma=2.0, gamma_g=1.0)
        run = run_nlpre(lre.sample(grid), cfg, theta_true=theta)
        t = run.t
        integral = t - 2 * (1 - np.exp(-t)) + 0.5 * (1 - np.exp(-2 * t))
        u_expected = 0.5 * theta[0] ** 2 * np.exp(-2 * cfg.gamma * integral)
        u = 0.5 * run.err_norm**2
        assert np.max(np.abs(u - u_expected)) <= 1e-5
        ok, worst = lyapunov_decrement(
            run.theta - theta, run.Delta, 1.0, cfg.gamma, grid.h, delta_mid=run.delta_mid
        )
        assert ok, worst

    def test_full_rejection_chain_decrement(self):
        # pulse-excited rejection chain; exact sinusoid premise via the
        # analytic construction so the regression is clean from t = 0
        from paramest.robust import run_rejection

        theta, omega = 5.0, 5.0
        xi = lambda t: 0.5 * math.sin(omega * t + 0.4)
        delta_fn = lambda t: 1.0 if t <= 4.0 else 0.0
        y_fn = lambda t: delta_fn(t) * theta + xi(t)
        grid = TimeGrid(h=0.02, n_steps=5000)
        rej = run_rejection(y_fn, delta_fn, 1.0, grid)
        m = overparam_sinusoid_map()
        cfg = NlpreConfig(m, gamma=150.0, gamma_g=0.9,
                          theta_g0=np.array([0.4, 0.2, 0.5]), theta0=np.array([0.2, 0.4]))
        truth = np.array([theta, 1.0 / omega**2])
        run = run_nlpre(rej.as_lre_data(), cfg, theta_true=truth)
        ok, worst = lyapunov_decrement(
            run.theta - truth, run.Delta, m.rho, cfg.gamma, grid.h,
            tol=1e-6, delta_mid=run.delta_mid,
        )
        assert ok, worst
