"""Jet arithmetic and observability-stack tests against independent oracles."""

import math

import numpy as np
import pytest

from conftest import output_derivative_oracle

from templab import jets
from templab.errors import CapabilityError
from templab.jets import ConstantSignal, Dual, JetScalar, calH, calH_jacobian, hk
from templab.models import builtin_system
from templab.template import ControlTemplate


def poly_jet(coeffs, t0, order):
    """Raw derivatives of sum_j coeffs[j] t^j at t0."""
    out = []
    for k in range(order + 1):
        val = 0.0
        for j in range(k, len(coeffs)):
            val += coeffs[j] * math.perm(j, k) * t0 ** (j - k)
        out.append(val)
    return np.array(out)


class TestJetScalar:
    def test_polynomial_product_leibniz(self):
        # (t^2+1)(2t-3) expanded; raw derivatives must match the product jet
        t0, order = 0.7, 5
        a = JetScalar(poly_jet([1.0, 0.0, 1.0], t0, order))
        b = JetScalar(poly_jet([-3.0, 2.0], t0, order))
        prod = a * b
        expect = poly_jet([-3.0, 2.0, -3.0, 2.0], t0, order)
        np.testing.assert_allclose(prod.c, expect, atol=1e-12)

    def test_division_inverts_product(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a = JetScalar(rng.standard_normal(6))
            b = JetScalar(rng.standard_normal(6))
            b.c[0] += 3.0  # keep the denominator away from zero
            np.testing.assert_allclose(((a * b) / b).c, a.c, atol=1e-10)

    def test_exp_closed_form(self):
        # d^k/dt^k exp(2t) = 2^k exp(2t)
        t0 = 0.3
        x = JetScalar(poly_jet([0.0, 2.0], t0, 6))
        e = jets.exp(x)
        expect = [2.0 ** k * math.exp(2.0 * t0) for k in range(7)]
        np.testing.assert_allclose(e.c, expect, rtol=1e-13)

    def test_sincos_pair_closed_form(self):
        # d^k sin(w t) = w^k sin(w t + k pi/2)
        t0, w = 0.4, 1.7
        x = JetScalar(poly_jet([0.0, w], t0, 6))
        s, c = jets.sincos(x)
        for k in range(7):
            assert s.c[k] == pytest.approx(w ** k * math.sin(w * t0 + k * math.pi / 2),
                                           abs=1e-12)
            assert c.c[k] == pytest.approx(w ** k * math.cos(w * t0 + k * math.pi / 2),
                                           abs=1e-12)

    def test_sqrt_squares_back(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            a = JetScalar(rng.standard_normal(6))
            a.c[0] = abs(a.c[0]) + 1.0
            s = jets.sqrt(a)
            np.testing.assert_allclose((s * s).c, a.c, atol=1e-10)

    def test_exp_sin_product_closed_form(self):
        # (e^t sin t)^(k) = 2^(k/2) e^t sin(t + k pi/4)
        t0 = 0.2
        tjet = JetScalar(poly_jet([0.0, 1.0], t0, 6))
        prod = jets.exp(tjet) * jets.sin(tjet)
        for k in range(7):
            expect = 2.0 ** (k / 2.0) * math.exp(t0) * math.sin(t0 + k * math.pi / 4)
            assert prod.c[k] == pytest.approx(expect, rel=1e-12, abs=1e-12)


class TestDual:
    def test_gradient_of_rational(self):
        # g(a, b) = a*b + a/b - sin(a)
        a = Dual(1.3, np.array([1.0, 0.0]))
        b = Dual(-0.7, np.array([0.0, 1.0]))
        out = a * b + a / b - jets.sin(a)
        ga = -0.7 + 1.0 / -0.7 - math.cos(1.3)
        gb = 1.3 - 1.3 / 0.49
        assert out.v == pytest.approx(1.3 * -0.7 + 1.3 / -0.7 - math.sin(1.3))
        np.testing.assert_allclose(out.g, [ga, gb], rtol=1e-12)

    def test_sqrt_exp_chain(self):
        a = Dual(0.9, np.array([1.0]))
        out = jets.sqrt(jets.exp(a))
        assert out.v == pytest.approx(math.exp(0.45))
        assert out.g[0] == pytest.approx(0.5 * math.exp(0.45))


class TestOutputJets:
    def test_hk_matches_fd_oracle(self):
        bm = builtin_system("bilinear2d")
        tpl = ControlTemplate(T=1.0, coeffs=np.array([[0.8, -0.4, 0.3]]))
        x0 = np.array([0.35, -0.2])
        mu, R = 0.9, np.array([[1.0]])
        sigma = jets._scaled_input_jet(tpl, 0.0, mu, R, 4)
        for k in range(5):
            got = hk(bm.system, x0, sigma, k)
            ref = np.atleast_1d(output_derivative_oracle(bm.system, x0, tpl, mu, R, k))
            assert got[0] == pytest.approx(float(ref[0]), rel=2e-6, abs=2e-6), f"k={k}"

    def test_time_shift_consistency(self):
        # calH at (x(t1), t1) predicts the same output derivatives as
        # propagating x0 and differentiating at the shifted time
        from conftest import integrated_output, richardson_fd
        bm = builtin_system("linear2d")
        tpl = ControlTemplate(T=1.0, coeffs=np.array([[0.5, 0.7]]))
        mu, R = 1.2, np.array([[1.0]])
        x0 = np.array([0.3, 0.1])
        t1 = 0.4

        def y(t):
            return integrated_output(bm.system, x0, tpl, mu, R, [t])[0, 0]

        from scipy.integrate import solve_ivp
        sol = solve_ivp(lambda t, x: bm.system.f_np(
            x, mu * (R @ tpl.jet(t, 0)[0])), (0.0, t1), x0,
            rtol=1e-12, atol=1e-13, dense_output=True, method="DOP853")
        x1 = sol.sol(t1)
        stack = calH(bm.system, x1, t1, tpl, mu, R, 3)
        for k in range(4):
            ref = richardson_fd(y, t1, k, 0.05)
            assert stack.block(k)[0] == pytest.approx(ref, rel=1e-6, abs=1e-6)

    def test_jacobian_matches_finite_differences(self):
        bm = builtin_system("bilinear2d")
        tpl = ControlTemplate(T=1.0, coeffs=np.array([[1.0, 0.5]]))
        x0 = np.array([0.2, -0.4])
        mu, R = 0.7, np.array([[-1.0]])
        J = calH_jacobian(bm.system, x0, 0.1, tpl, mu, R, 2)
        h = 1e-6
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            plus = jets._calh_values(bm.system, x0 + e, 0.1, tpl, mu, R, 2)
            minus = jets._calh_values(bm.system, x0 - e, 0.1, tpl, mu, R, 2)
            np.testing.assert_allclose(J[:, j], (plus - minus) / (2 * h),
                                       rtol=1e-6, atol=1e-8)

    def test_stack_block_layout(self):
        bm = builtin_system("linear2d")
        stack = calH(bm.system, np.array([0.5, -0.25]), 0.0,
                     jets.null_signal(1), 0.0, np.eye(1), 1)
        # y = x1, ydot = x2 for the double integrator under null input
        np.testing.assert_allclose(stack.block(0), [0.5])
        np.testing.assert_allclose(stack.block(1), [-0.25])

    def test_depth_capability_error(self):
        bm = builtin_system("linear2d")
        with pytest.raises(CapabilityError):
            hk(bm.system, np.zeros(2), None, jets.MAX_JET_DEPTH + 1)

    def test_constant_signal_jet(self):
        sig = ConstantSignal([2.0, -1.0])
        j = sig.jet(3.7, 3)
        np.testing.assert_allclose(j[0], [2.0, -1.0])
        np.testing.assert_allclose(j[1:], 0.0)

    def test_orthogonality_enforced(self):
        bm = builtin_system("linear2d")
        with pytest.raises(ValueError):
            calH(bm.system, np.zeros(2), 0.0, jets.null_signal(1), 1.0,
                 np.array([[2.0]]), 1)
