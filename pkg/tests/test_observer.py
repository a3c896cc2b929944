"""Gain synthesis, numerical left inversion, and the observer flow field."""

import numpy as np
import pytest

from templab import jets
from templab.errors import ConfigError
from templab.models import builtin_system
from templab.observer import (ObserverConfig, WarmStart, hurwitz_gains,
                              observer_rhs, phi_invert)
from templab.template import ControlTemplate


def benchmark_setup(name):
    bm = builtin_system(name)
    cfg = ObserverConfig.default(q=bm.q, theta=bm.theta, delta=bm.delta)
    tpl = ControlTemplate(T=bm.T, coeffs=bm.template_coeffs)
    return bm, cfg, tpl


class TestGains:
    def test_binomial_values(self):
        np.testing.assert_array_equal(hurwitz_gains(1), [2.0, 1.0])
        np.testing.assert_array_equal(hurwitz_gains(2), [3.0, 3.0, 1.0])
        np.testing.assert_array_equal(hurwitz_gains(3), [4.0, 6.0, 4.0, 1.0])

    def test_default_config_is_hurwitz(self):
        for q in range(4):
            ObserverConfig.default(q=q, theta=2.0, delta=0.1)

    def test_non_hurwitz_rejected(self):
        with pytest.raises(ConfigError):
            ObserverConfig(q=1, c=np.array([-1.0, 1.0]), theta=2.0, delta=0.1)

    def test_theta_below_one_rejected(self):
        with pytest.raises(ConfigError):
            ObserverConfig.default(q=1, theta=0.5, delta=0.1)


class TestPhiInvert:
    @pytest.mark.parametrize("name", ["linear2d", "bilinear2d",
                                      "bilinear_unobservable"])
    def test_round_trip(self, name):
        bm, cfg, tpl = benchmark_setup(name)
        rng = np.random.default_rng(17)
        lo, hi = bm.spec.outer.bounds[:, 0], bm.spec.outer.bounds[:, 1]
        for _ in range(30):
            x = rng.uniform(lo, hi)
            t = rng.uniform(0.0, tpl.T)
            mu = rng.uniform(0.0, bm.spec.lambda_bar)
            R = np.array([[rng.choice([-1.0, 1.0])]])
            z = jets._calh_values(bm.system, x, t, tpl, mu, R, cfg.q)
            res = phi_invert(z, t, mu, R, bm.system, tpl, cfg,
                             np.zeros(bm.system.n), bm.sat)
            assert res.converged
            assert np.linalg.norm(res.x_hat - x) < 1e-7

    def test_warm_start_speeds_convergence(self):
        bm, cfg, tpl = benchmark_setup("bilinear2d")
        x = np.array([0.6, -0.9])
        z = jets._calh_values(bm.system, x, 0.1, tpl, 0.7,
                              np.array([[1.0]]), cfg.q)
        cold = phi_invert(z, 0.1, 0.7, np.array([[1.0]]), bm.system, tpl,
                          cfg, np.zeros(2), bm.sat)
        warm = phi_invert(z, 0.1, 0.7, np.array([[1.0]]), bm.system, tpl,
                          cfg, x + 1e-4, bm.sat)
        assert warm.iterations <= cold.iterations
        assert warm.converged

    def test_non_range_input_converges_in_ball(self):
        bm, cfg, tpl = benchmark_setup("bilinear_unobservable")
        x = np.array([0.4, -0.3])
        z = jets._calh_values(bm.system, x, 0.1, tpl, 0.8,
                              np.array([[1.0]]), cfg.q)
        z_bad = z + np.array([0.5, -2.0, 30.0])
        res = phi_invert(z_bad, 0.1, 0.8, np.array([[1.0]]), bm.system, tpl,
                         cfg, np.zeros(2), bm.sat)
        assert res.converged
        assert res.residual > 1.0  # genuinely out of range
        assert np.linalg.norm(res.x_hat) <= 2.0 * bm.sat.bound * (1 + 1e-12)

    def test_iteration_budget(self):
        bm, cfg, tpl = benchmark_setup("linear2d")
        z = np.array([1e6, -1e6, 1e6, -1e6])[: bm.system.m * (cfg.q + 1)]
        res = phi_invert(z, 0.0, 0.5, np.array([[1.0]]), bm.system, tpl,
                         cfg, np.zeros(2), bm.sat)
        assert res.iterations <= 50
        assert np.all(np.isfinite(res.x_hat))


class TestObserverRhs:
    def test_linear_structure(self):
        # for the double integrator under zero input: zdot_0 = z_1 + theta c0 e,
        # zdot_1 = H_2(sat(phi(z))) + theta^2 c1 e with H_2 = u = 0
        bm, cfg, tpl = benchmark_setup("linear2d")
        x = np.array([0.3, -0.1])
        z = jets._calh_values(bm.system, x, 0.0, tpl, 0.0, np.eye(1), cfg.q)
        y = bm.system.h_np(x)
        warm = WarmStart(np.zeros(2))
        zdot, phi = observer_rhs(y, z, 0.0, 0.0, np.eye(1), bm.system, tpl,
                                 cfg, bm.sat, warm)
        # consistent z and exact y: innovation is zero, zdot = (z1, H_2) = (z1, 0)
        assert phi.converged
        np.testing.assert_allclose(zdot, [z[1], 0.0], atol=1e-8)

    def test_innovation_scaling(self):
        bm, cfg, tpl = benchmark_setup("linear2d")
        x = np.array([0.3, -0.1])
        z = jets._calh_values(bm.system, x, 0.0, tpl, 0.0, np.eye(1), cfg.q)
        warm = WarmStart(np.zeros(2))
        y_off = bm.system.h_np(x) + 0.25
        zdot_off, _ = observer_rhs(y_off, z, 0.0, 0.0, np.eye(1), bm.system,
                                   tpl, cfg, bm.sat, warm)
        zdot_on, _ = observer_rhs(bm.system.h_np(x), z, 0.0, 0.0, np.eye(1),
                                  bm.system, tpl, cfg, bm.sat, warm)
        diff = zdot_off - zdot_on
        c = cfg.c
        expect = np.array([cfg.theta * c[0] * 0.25,
                           cfg.theta ** 2 * c[1] * 0.25])
        np.testing.assert_allclose(diff, expect, rtol=1e-10)
