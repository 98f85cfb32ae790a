import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpwolff.geometry import (
    Domain, ExponentSummary, GeometryError, Layer, LayerStack, ScalarField,
    ball_integral, ball_min, build_grid, build_layered_fields, cap_fraction,
    eval_field, holder_seminorm, unit_ball_volume, validate_exponents,
)
from dpwolff.fiber import preset_cable, preset_fiber


@pytest.fixture(scope="module")
def square8():
    return build_grid(Domain("square", 1.0), 8)


@pytest.fixture(scope="module")
def disk64():
    return build_grid(Domain("disk", 1.0), 64)


class TestGrid:
    def test_square_node_count(self, square8):
        assert square8.size == 81
        assert square8.h == 0.125

    def test_disk_mask(self):
        g = build_grid(Domain("disk", 1.0), 8)
        r = np.linalg.norm(g.coords[g.mask], axis=1)
        assert np.all(r <= 1 + 1e-12)

    def test_annulus_mask(self):
        g = build_grid(Domain("annulus", 1.0, inner_radius=0.5), 64)
        r = np.linalg.norm(g.coords[g.mask], axis=1)
        assert np.all(r >= 0.5 - g.h)

    def test_boundary_interior_partition(self, disk64):
        g = disk64
        assert not np.any(g.boundary & g.interior)
        assert np.array_equal(g.boundary | g.interior, g.mask)

    def test_interior_stencil_inside(self, disk64):
        g = disk64
        ny, nx = g.shape
        m = g.mask.reshape(ny, nx)
        for i, j in zip(*np.nonzero(g.interior.reshape(ny, nx))):
            assert m[i - 1, j] and m[i + 1, j] and m[i, j - 1] and m[i, j + 1]

    def test_radial_grid(self):
        g = build_grid(Domain("radial", 2.0, n=3), 16)
        assert g.h == 0.125
        assert g.boundary.sum() == 1 and g.boundary[-1]

    def test_rejects_tiny_resolution(self):
        with pytest.raises(GeometryError):
            build_grid(Domain("square", 1.0), 2)

    def test_distance_to_boundary_square(self):
        d = Domain("square", 2.0)
        assert d.distance_to_boundary([0.5, 1.5]) == pytest.approx(0.5)


class TestScalarField:
    def test_size_mismatch(self, square8):
        with pytest.raises(GeometryError):
            ScalarField(square8, np.zeros(5))

    def test_non_finite(self, square8):
        vals = np.zeros(81)
        vals[3] = np.nan
        with pytest.raises(GeometryError):
            ScalarField(square8, vals)


class TestLayers:
    def test_gap_rejected(self):
        with pytest.raises(GeometryError, match="layers"):
            LayerStack((Layer(0, 0.4, 2, 2, 0), Layer(0.5, 1, 2, 2, 0)), 0.05)

    def test_bad_exponents(self):
        with pytest.raises(GeometryError):
            LayerStack((Layer(0, 1, 1.0, 2, 0),), 0.05)
        with pytest.raises(GeometryError):
            LayerStack((Layer(0, 1, 2.0, 1.9, 0),), 0.05)

    def test_delta_too_wide(self):
        with pytest.raises(GeometryError, match="delta"):
            LayerStack((Layer(0, 0.1, 2, 2, 0), Layer(0.1, 1, 2, 2, 0)), 0.2)

    def test_single_layer_constant(self, disk64):
        stack = LayerStack((Layer(0, 1, 1.8, 1.9, 0),), 0.05)
        p, q, a = build_layered_fields(stack, disk64)
        m = disk64.mask
        assert np.all(p.values[m] == 1.8)
        assert np.all(q.values[m] == 1.9)
        assert np.all(a.values[m] == 0.0)

    def test_two_layer_ramp(self):
        stack = LayerStack((Layer(0, 0.5, 2, 2, 0), Layer(0.5, 1, 2, 2, 0.5)), 0.1)
        r = np.array([0.0, 0.45, 0.5, 0.55, 0.9])
        assert np.allclose(stack.profile(r, "a"), [0, 0, 0.25, 0.5, 0.5])

    def test_fiber_midpoints(self):
        stack = preset_fiber()
        g = build_grid(Domain("disk", 1.0), 128)
        p, q, a = build_layered_fields(stack, g)
        for layer in stack.layers:
            mid = 0.5 * (layer.r_inner + layer.r_outer)
            x = (mid, 0.0)
            assert eval_field(p, x) == pytest.approx(layer.p)
            assert eval_field(q, x) == pytest.approx(layer.q)
            assert eval_field(a, x) == pytest.approx(layer.a)

    def test_piecewise_constant_outside_bands(self):
        stack = preset_fiber()
        g = build_grid(Domain("disk", 1.0), 128)
        _, _, a = build_layered_fields(stack, g)
        r = g.radii[g.mask]
        vals = a.values[g.mask]
        for layer in stack.layers:
            lo = layer.r_inner + stack.delta / 2 if layer.r_inner > 0 else 0.0
            hi = layer.r_outer - stack.delta / 2
            sel = (r >= lo) & (r <= hi)
            assert np.all(vals[sel] == layer.a)


class TestHolder:
    def test_constant_zero(self, square8):
        assert holder_seminorm(ScalarField.constant(square8, 0.3), 1.0).value == 0.0

    def test_radial_ramp(self):
        stack = LayerStack((Layer(0, 0.5, 2, 2, 0), Layer(0.5, 1, 2, 2, 0.5)), 0.1)
        g = build_grid(Domain("radial", 1.0, n=2), 200)
        _, _, a = build_layered_fields(stack, g)
        assert holder_seminorm(a, 1.0).value == pytest.approx(5.0, rel=1e-9)

    @pytest.mark.parametrize("res", [64, 128])
    def test_planar_step_slope(self, res):
        # the ramp slope 0.5/delta within relative error 2h/delta
        delta = 0.1
        stack = LayerStack((Layer(0, 0.5, 2, 2, 0), Layer(0.5, 1, 2, 2, 0.5)), delta)
        g = build_grid(Domain("disk", 1.0), res)
        _, _, a = build_layered_fields(stack, g)
        s = holder_seminorm(a, 1.0)
        assert abs(s.value / (0.5 / delta) - 1) <= 2 * g.h / delta

    def test_sampling_deterministic(self):
        g = build_grid(Domain("disk", 1.0), 128)
        _, _, a = build_layered_fields(preset_fiber(), g)
        s1, s2 = holder_seminorm(a, 1.0, seed=3), holder_seminorm(a, 1.0, seed=3)
        assert s1.sampled and s1 == s2


def _summary(p, q, alpha, n):
    return ExponentSummary(p, p, q, q, alpha, 0.0, n)


class TestValidate:
    @pytest.mark.parametrize("p, q, alpha, n, valid, threshold", [
        (2.0, 2.5, 1.0, 3, True, 3.0),
        (1.5, 1.6, 1.0, 3, False, 1.0),
        (1.8, 1.9, 1.0, 2, True, 2.8),
        # perturbations of the three fixtures across one clause each
        (2.0, 3.0, 1.0, 3, False, 3.0),
        (1.5, 1.6, 1.0, 2, True, 2.0),
        (1.8, 2.0, 1.0, 2, False, 2.8),
    ])
    def test_fixtures(self, p, q, alpha, n, valid, threshold):
        rep = validate_exponents(_summary(p, q, alpha, n))
        assert rep.valid is valid
        assert rep.threshold == pytest.approx(threshold)

    def test_fiber_preset(self):
        lo_p, hi_p, lo_q, hi_q = preset_fiber().exponent_bounds()
        assert (lo_p, hi_p, lo_q, hi_q) == (1.8, 1.9, 1.9, 1.95)
        rep = validate_exponents(ExponentSummary(lo_p, hi_p, lo_q, hi_q, 1.0, 6.0, 2))
        assert rep.valid and rep.threshold == pytest.approx(2.8)

    def test_cable_preset(self):
        stack = preset_cable()
        assert len(stack.layers) == 5
        lo_p, hi_p, lo_q, hi_q = stack.exponent_bounds()
        assert hi_p <= lo_q == 2.0
        rep = validate_exponents(ExponentSummary(lo_p, hi_p, lo_q, hi_q, 1.0, 1.0, 3))
        assert rep.valid
        assert rep.threshold == pytest.approx(3 * 0.85 / 1.15)

    @given(st.floats(1.01, 3.0), st.floats(0.0, 1.0), st.floats(0.05, 1.0), st.integers(2, 4))
    def test_valid_iff_all_clauses(self, p, dq, alpha, n):
        rep = validate_exponents(_summary(p, p + dq, alpha, n))
        assert rep.valid == all(rep.clauses.values())
        sob = math.inf if p >= n else n * (p - 1) / (n - p)
        hand = p + dq <= min(p + alpha, sob) and p + dq < n
        assert rep.valid == hand


class TestQueries:
    def test_eval_constant(self, square8):
        assert eval_field(ScalarField.constant(square8, 3.0), (0.37, 0.81)) == pytest.approx(3.0)

    def test_eval_linear(self, square8):
        u = ScalarField.from_function(square8, lambda x: x[:, 0])
        assert eval_field(u, (0.25, 0.5)) == pytest.approx(0.25)

    def test_eval_cell_center(self, square8):
        rng = np.random.default_rng(1)
        u = ScalarField(square8, rng.random(81))
        h = square8.h
        corners = [u.values[i * 9 + j] for i in (2, 3) for j in (4, 5)]
        assert eval_field(u, (4.5 * h, 2.5 * h)) == pytest.approx(np.mean(corners))

    def test_eval_outside(self, square8):
        with pytest.raises(GeometryError):
            eval_field(ScalarField.constant(square8, 1.0), (1.5, 0.5))

    def test_ball_integral_zero(self, disk64):
        assert ball_integral(ScalarField.constant(disk64, 0.0), (0, 0), 0.5) == 0.0

    def test_ball_integral_area(self):
        g = build_grid(Domain("disk", 1.0), 256)
        val = ball_integral(ScalarField.constant(g, 2.0), (0, 0), 0.5)
        assert val == pytest.approx(math.pi / 2, abs=4 * math.pi * g.h)

    def test_ball_integral_radial(self):
        g = build_grid(Domain("radial", 1.0, n=3), 512)
        val = ball_integral(ScalarField.constant(g, 1.0), (0.0,), 0.5)
        assert val == pytest.approx(4 / 3 * math.pi * 0.125, rel=1e-3)

    def test_ball_integral_radial_off_center(self):
        # off-center ball fully inside: volume formula again
        g = build_grid(Domain("radial", 1.0, n=3), 2000)
        val = ball_integral(ScalarField.constant(g, 1.0), (0.4,), 0.3)
        assert val == pytest.approx(unit_ball_volume(3) * 0.3**3, rel=5e-3)

    def test_cap_fraction_limits(self):
        r = np.array([0.05, 0.5, 1.5])
        frac = cap_fraction(r, 0.5, 0.8, 3)
        assert frac[0] == 1.0 and frac[2] == 0.0
        assert 0 < frac[1] < 1

    def test_ball_min_paraboloid(self, disk64):
        u = ScalarField.from_function(disk64, lambda x: (x**2).sum(axis=1))
        assert ball_min(u, (0.3, 0.0), 0.1) == pytest.approx(0.04, abs=2 * disk64.h)

    def test_ball_min_constant(self, disk64):
        assert ball_min(ScalarField.constant(disk64, 7.0), (0.1, 0.1), 0.2) == 7.0

    def test_ball_min_linear(self):
        g = build_grid(Domain("square", 1.0), 64)
        u = ScalarField.from_function(g, lambda x: x[:, 0])
        assert ball_min(u, (0.5, 0.5), 0.25) == pytest.approx(0.25, abs=g.h)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.4), st.floats(0.05, 0.4), st.floats(0.0, 3.0), st.floats(0.0, 3.0))
def test_ball_integral_additive_and_monotone(r1, r2, c1, c2):
    g = build_grid(Domain("disk", 1.0), 32)
    x = g.coords
    f1 = ScalarField(g, c1 * (1 + x[:, 0] ** 2))
    f2 = ScalarField(g, c2 * (1 + x[:, 1]))
    lo, hi = sorted((r1, r2))
    s = ball_integral(f1 + f2, (0.1, 0.0), lo)
    assert s == pytest.approx(ball_integral(f1, (0.1, 0.0), lo) + ball_integral(f2, (0.1, 0.0), lo))
    assert ball_integral(f1, (0.1, 0.0), hi) >= ball_integral(f1, (0.1, 0.0), lo)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.4), st.floats(0.05, 0.4), st.integers(0, 1000))
def test_ball_min_monotone(r1, r2, seed):
    g = build_grid(Domain("disk", 1.0), 32)
    u = ScalarField(g, np.random.default_rng(seed).random(g.size))
    lo, hi = sorted((r1, r2))
    assert ball_min(u, (0.0, 0.1), hi) <= ball_min(u, (0.0, 0.1), lo)
