"""Benchmarks, boxes, saturation, and the expression-tree system builder."""

import numpy as np
import pytest

from templab import jets
from templab.errors import ConfigError
from templab.models import (Box, CompactSpec, SatMap, builtin_names,
                            builtin_system, system_from_expressions,
                            verify_state_feedback_les)


class TestBox:
    def test_grid_and_contains(self):
        box = Box(np.array([[-1.0, 1.0], [0.0, 2.0]]))
        pts = box.grid(3)
        assert len(pts) == 9
        assert all(box.contains(p) for p in pts)
        assert not box.contains([1.5, 1.0])

    def test_strictly_inside(self):
        inner = Box(np.array([[-0.5, 0.5]]))
        outer = Box(np.array([[-1.0, 1.0]]))
        assert inner.strictly_inside(outer)
        assert not outer.strictly_inside(inner)

    def test_degenerate_box_rejected(self):
        with pytest.raises(ConfigError):
            Box(np.array([[1.0, -1.0]]))


class TestCompactSpec:
    def test_lambda_bar_covers_grid_max(self):
        bm = builtin_system("linear2d")
        # |lam| = |x1 + 2 x2| peaks at a corner of the outer box: |2 + 4| = 6
        corner = max(np.linalg.norm(bm.system.lam_np(c))
                     for c in bm.spec.outer.corners())
        assert bm.spec.lambda_bar >= corner
        assert bm.spec.lambda_bar == pytest.approx(corner * 1.1, rel=1e-12)

    def test_inner_must_be_inside_outer(self):
        bm = builtin_system("linear2d")
        with pytest.raises(ConfigError):
            CompactSpec(inner=bm.spec.outer, outer=bm.spec.inner,
                        lambda_bar=1.0)


class TestSatMap:
    def test_identity_on_outer_box(self):
        bm = builtin_system("bilinear2d")
        rng = np.random.default_rng(0)
        lo, hi = bm.spec.outer.bounds[:, 0], bm.spec.outer.bounds[:, 1]
        for _ in range(50):
            x = rng.uniform(lo, hi)
            np.testing.assert_array_equal(bm.sat.apply_np(x), x)

    def test_global_bound(self):
        bm = builtin_system("bilinear2d")
        rng = np.random.default_rng(1)
        for _ in range(50):
            x = rng.standard_normal(2) * 50.0
            assert np.linalg.norm(bm.sat.apply_np(x)) <= 2.0 * bm.sat.bound + 1e-12

    def test_radial_monotone_continuous(self):
        sat = SatMap(1.0)
        rs = np.linspace(0.5, 3.5, 200)
        outs = [np.linalg.norm(sat.apply_np([r, 0.0])) for r in rs]
        assert np.all(np.diff(outs) > -1e-9)
        assert max(abs(np.diff(outs))) < 0.05  # no jumps at band edges

    def test_jet_evaluable_and_smooth_at_junction(self):
        # raw derivatives of t -> sat(x0 + t d) must exist across the band;
        # compare first derivative against central differences
        sat = SatMap(1.0)
        d = np.array([1.0, 0.2])
        d /= np.linalg.norm(d)
        for r0 in (0.8, 1.3, 1.9, 2.3):
            x0 = r0 * d

            def component(t_jet):
                xs = [x0[i] + t_jet * d[i] for i in range(2)]
                return sat(xs)[0]

            tj = jets.JetScalar(np.array([0.0, 1.0, 0.0, 0.0]))
            out = component(tj)
            h = 1e-5
            fd = (jets.scalar_value(component(jets.JetScalar(np.array([h, 1.0, 0, 0]))))
                  - jets.scalar_value(component(jets.JetScalar(np.array([-h, 1.0, 0, 0]))))) / (2 * h)
            assert out.c[1] == pytest.approx(fd, rel=1e-5, abs=1e-7)


class TestBenchmarks:
    @pytest.mark.parametrize("name", builtin_names())
    def test_normalization(self, name):
        bm = builtin_system(name)
        zero = np.zeros(bm.system.n)
        assert np.linalg.norm(bm.system.lam_np(zero)) < 1e-12
        assert np.linalg.norm(bm.system.h_np(zero)) < 1e-12
        assert np.linalg.norm(bm.system.f_np(zero, bm.system.lam_np(zero))) < 1e-12

    @pytest.mark.parametrize("name", builtin_names())
    def test_dimensions_consistent(self, name):
        bm = builtin_system(name)
        s = bm.system
        assert s.m * (bm.q + 1) >= s.n
        assert bm.template_coeffs.shape[0] == s.p
        assert bm.delta <= bm.T

    def test_unknown_name(self):
        with pytest.raises(ConfigError):
            builtin_system("nope")

    def test_state_feedback_les_on_bilinear2d(self):
        bm = builtin_system("bilinear2d")
        report = verify_state_feedback_les(bm.system, bm.spec, horizon=8.0)
        assert report.all_contained
        assert report.min_nu > 0
        assert report.escapes == 0


class TestExpressionSystems:
    def test_matches_builtin_dynamics(self):
        sys_expr = system_from_expressions(
            2, 1, 1,
            ["x2", "-x1 - x2 + u1*(1 + x1)"],
            ["x1"],
            ["-0.5*x1 - 0.5*x2"])
        bm = builtin_system("bilinear2d")
        rng = np.random.default_rng(2)
        for _ in range(20):
            x = rng.standard_normal(2)
            u = rng.standard_normal(1)
            np.testing.assert_allclose(sys_expr.f_np(x, u),
                                       bm.system.f_np(x, u), rtol=1e-14)

    def test_jet_evaluable(self):
        sys_expr = system_from_expressions(
            1, 1, 1, ["sin(x1) + u1"], ["x1"], ["-x1"])
        sigma = np.zeros((3, 1))
        out = jets.hk(sys_expr, np.array([0.4]), sigma, 2)
        # ydd = d/dt sin(x1) = cos(x1) * sin(x1) at u = 0
        assert out[0] == pytest.approx(np.cos(0.4) * np.sin(0.4), rel=1e-12)

    def test_rejects_unnormalized(self):
        with pytest.raises(ConfigError):
            system_from_expressions(1, 1, 1, ["x1 + u1"], ["x1 + 1"], ["-x1"])

    def test_rejects_unsafe_syntax(self):
        with pytest.raises(ConfigError):
            system_from_expressions(1, 1, 1, ["__import__('os')"], ["x1"],
                                    ["-x1"])
