import math

import numpy as np
import pytest

from paramest.numcore import TimeGrid
from paramest.lre import CallableLre
from paramest.baseline import (
    DgConfig,
    DgState,
    dg_extension_step,
    dg_gradient_step,
    dg_mixing_step,
    run_dg,
)


class TestConfig:
    def test_beta_floor(self):
        with pytest.raises(ValueError):
            DgConfig(q=1, beta=0.5)
        with pytest.raises(ValueError):
            DgConfig(q=1, k=-0.1)


class TestMixing:
    def test_zero_regressor_stays_zero(self):
        cfg = DgConfig(q=2)
        st = DgState.initial(cfg)
        for _ in range(100):
            st = dg_mixing_step(st, np.zeros(2), 0.0, 1e-2, cfg)
        assert not st.Z.any() and not st.Psi.any()
        assert st.Delta_bar == 0.0

    def test_scalar_first_order_closed_form(self):
        # phi = 1, y = theta: Z(t) = theta (g/lam)(1 - e^{-lam t}), Psi alike
        theta, lam, g = 3.0, 2.0, 0.5
        cfg = DgConfig(q=1, lam=lam, g=g)
        st = DgState.initial(cfg)
        h = 1e-3
        for k in range(3000):
            st = dg_mixing_step(st, np.array([1.0]), theta, h, cfg)
        t = 3000 * h
        z_expected = theta * (g / lam) * (1 - math.exp(-lam * t))
        psi_expected = (g / lam) * (1 - math.exp(-lam * t))
        assert st.Z[0] == pytest.approx(z_expected, abs=1e-6)
        assert st.Psi[0, 0] == pytest.approx(psi_expected, abs=1e-6)
        assert st.Y_mix[0] == st.Z[0]  # scalar adjugate is 1
        assert st.Delta_bar == st.Psi[0, 0]


class TestExtension:
    def test_quiet_mixing_keeps_pumped_vector_parked(self):
        # Delta_bar = 0, z = 0: the pumped vector's first entry is frozen
        # and the second cannot leave zero
        cfg = DgConfig(q=1, beta=0.8)
        st = DgState.initial(cfg)
        for k in range(500):
            st = dg_extension_step(st, 0.0, 0.0, 1e-2, cfg)
        assert np.array_equal(st.Phi_bar, np.array([1.0, 0.0]))
        assert st.z[0] == 0.0 and not st.zeta.any()

    def test_all_zero_inputs_keep_z_zero(self):
        cfg = DgConfig(q=3)
        st = DgState.initial(cfg)
        st = dg_extension_step(st, np.zeros(3), 0.0, 1e-2, cfg)
        assert not st.z.any()


class TestGradient:
    def test_frozen_when_regressor_zero(self):
        cfg = DgConfig(q=2)
        st = DgState.initial(cfg, theta0=np.array([1.0, -1.0]))
        st = dg_gradient_step(st, 1e-2, cfg)
        assert np.array_equal(st.theta, np.array([1.0, -1.0]))

    def test_constant_regressor_exponential(self):
        # pin Phi_bar_2 = c and y_bar = c * theta: error decays e^{-kappa c^2 t}
        theta_true, c = 4.0, 0.7
        cfg = DgConfig(q=1, kappa=10.0)
        st = DgState.initial(cfg)
        st.Phi_bar = np.array([0.0, c])
        st.z = np.array([c * theta_true])  # y_bar = z - zeta_2 = c theta
        h = 1e-3
        for k in range(2000):
            st = dg_gradient_step(st, h, cfg)
        t = 2000 * h
        expected = theta_true * (1 - math.exp(-cfg.kappa * c**2 * t))
        assert st.theta[0] == pytest.approx(expected, abs=1e-6)


class TestFullRuns:
    def test_manufactured_regression_and_convergence(self):
        theta = np.array([2.0, -1.0])
        phi_fn = lambda t: np.array([1.0, math.exp(-0.5 * t)])
        lre = CallableLre(phi_fn, theta)
        grid = TimeGrid(h=1e-2, n_steps=30000)
        cfg = DgConfig(q=2, lam=1.0, g=1.0, k=0.4, beta=0.8, kappa=10.0)
        run = run_dg(lre.sample(grid, "ct"), cfg)
        res = np.abs(run.y_bar - run.Phi_bar[:, 1][:, None] * theta[None, :])
        settle = run.t >= 10.0
        assert np.max(res[settle]) <= 1e-3
        assert run.err_norm[-1] <= 1e-2 * np.linalg.norm(theta)
        assert run.sup_state < 1e3
        assert not run.diverged

    def test_bounded_extension_states(self):
        theta = np.array([1.0])
        lre = CallableLre(lambda t: np.array([math.sin(t)]), theta)
        grid = TimeGrid(h=1e-2, n_steps=10000)
        run = run_dg(lre.sample(grid, "ct"), DgConfig(q=1, beta=1.5))
        assert run.sup_state < 1e3
