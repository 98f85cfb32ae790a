import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpwolff.fiber import preset_cable
from dpwolff.geometry import (
    Domain, Layer, LayerStack, ScalarField, build_grid, eval_field,
)
from dpwolff.solver import (
    SolveParams, SolverError, analytic_radial_plaplace, energy, energy_gradient,
    load_vector, solve_dirichlet, solve_radial, stiffness_matrix, weak_residual,
    write_solution_csv,
)


def const(grid, v):
    return ScalarField.constant(grid, v)


@pytest.fixture(scope="module")
def square():
    return build_grid(Domain("square", 1.0), 8)


@pytest.fixture(scope="module")
def disk32():
    return build_grid(Domain("disk", 1.0), 32)


class TestEnergy:
    def test_linear_p2(self, square):
        u = ScalarField.from_function(square, lambda x: x[:, 0])
        assert energy(u, const(square, 2), const(square, 2), const(square, 0), const(square, 0)) \
            == pytest.approx(0.5, rel=1e-12)

    def test_linear_double_phase(self, square):
        u = ScalarField.from_function(square, lambda x: x[:, 0])
        assert energy(u, const(square, 2), const(square, 2), const(square, 1), const(square, 0)) \
            == pytest.approx(1.0, rel=1e-12)

    def test_linear_p4(self, square):
        u = ScalarField.from_function(square, lambda x: x[:, 0])
        assert energy(u, const(square, 4), const(square, 4), const(square, 0), const(square, 0)) \
            == pytest.approx(0.25, rel=1e-12)

    def test_load_term(self, square):
        # u = 1 everywhere, f = 3: energy is -3 * area
        assert energy(const(square, 1), const(square, 2), const(square, 2), const(square, 0),
                      const(square, 3)) == pytest.approx(-3.0, rel=1e-12)

    def test_rejects_p_le_1(self, square):
        with pytest.raises(SolverError):
            energy(const(square, 0), const(square, 1), const(square, 2), const(square, 0),
                   const(square, 0))


def _mixed_fields(grid, seed=0):
    x = grid.coords
    y = x[:, -1]
    p = ScalarField(grid, 1.6 + 0.3 * x[:, 0])
    q = ScalarField(grid, 2.0 + 0.2 * y)
    a = ScalarField(grid, 0.5 * x[:, 0] * y)
    f = ScalarField(grid, 1.0 + x[:, 0])
    u = ScalarField(grid, np.random.default_rng(seed).random(grid.size))
    return u, p, q, a, f


def _fd_gradient(u, p, q, a, f, eps, step=1e-6):
    grid = u.grid
    out = np.zeros(grid.size)
    base = u.values.copy()
    for i in np.flatnonzero(grid.interior):
        up, dn = base.copy(), base.copy()
        up[i] += step
        dn[i] -= step
        out[i] = (energy(up, p, q, a, f, eps) - energy(dn, p, q, a, f, eps)) / (2 * step)
    return out


class TestGradient:
    @pytest.mark.parametrize("eps", [1e-2, 1e-4])
    def test_finite_differences(self, square, eps):
        u, p, q, a, f = _mixed_fields(square)
        g = energy_gradient(u, p, q, a, f, eps).values
        fd = _fd_gradient(u, p, q, a, f, eps)
        err = np.abs(g - fd).max() / np.abs(fd).max()
        assert err <= 1e-6

    def test_constant_u(self, square):
        g = energy_gradient(const(square, 2.0), const(square, 1.8), const(square, 1.9),
                            const(square, 0.3), const(square, 0), eps=1e-3)
        assert np.all(g.values == 0)

    def test_quadratic_identity(self, disk32):
        g = disk32
        u = ScalarField(g, np.random.default_rng(2).random(g.size))
        f = ScalarField.from_function(g, lambda x: 1 + x[:, 0] ** 2)
        grad = energy_gradient(u, const(g, 2), const(g, 2), const(g, 0), f).values
        expected = stiffness_matrix(g) @ u.values - load_vector(f)
        expected[~g.interior] = 0
        assert np.abs(grad - expected).max() <= 1e-12

    def test_radial_fd(self):
        g = build_grid(Domain("radial", 1.0, n=3), 10)
        u, p, q, a, f = _mixed_fields(g)
        g1 = energy_gradient(u, p, q, a, f, 1e-3).values
        fd = _fd_gradient(u, p, q, a, f, 1e-3)
        assert np.abs(g1 - fd).max() / np.abs(fd).max() <= 1e-6


@pytest.fixture(scope="module")
def poisson64():
    g = build_grid(Domain("disk", 1.0), 64)
    res = solve_dirichlet(const(g, 2), const(g, 2), const(g, 0), const(g, 1))
    return g, res


class TestDirichlet:
    def test_poisson_coarse(self, poisson64):
        g, res = poisson64
        assert res.converged
        assert eval_field(res.u, (0, 0)) == pytest.approx(0.25, abs=0.01)

    def test_constants_are_minimizers(self, disk32):
        g = disk32
        res = solve_dirichlet(const(g, 1.8), const(g, 1.9), const(g, 0.4), const(g, 0), 3.0)
        assert res.converged and np.all(res.u.values[g.mask] == 3.0)

    def test_energy_descent(self):
        g = build_grid(Domain("disk", 1.0), 32)
        res = solve_dirichlet(const(g, 1.6), const(g, 1.8), const(g, 0.5), const(g, 1))
        hist = np.array(res.energy_history)
        assert res.converged
        assert np.all(np.diff(hist) <= 0)

    def test_weak_residual_small(self, poisson64):
        g, res = poisson64
        r = weak_residual(res.u, const(g, 2), const(g, 2), const(g, 0), const(g, 1))
        assert r <= 10 * 1e-7 * max(1.0, res.gradient_scale)

    def test_perturbation_raises_residual(self, poisson64):
        g, res = poisson64
        args = (const(g, 2), const(g, 2), const(g, 0), const(g, 1))
        base = weak_residual(res.u, *args)
        vals = res.u.values.copy()
        vals[np.flatnonzero(g.interior)[len(vals) // 4]] += 0.1
        assert weak_residual(ScalarField(g, vals), *args) > base

    def test_weak_residual_constant(self, disk32):
        g = disk32
        assert weak_residual(const(g, 1.5), const(g, 1.8), const(g, 1.9), const(g, 0.2),
                             const(g, 0)) == 0.0

    def test_forced_nonconvergence(self, disk32):
        g = disk32
        res = solve_dirichlet(const(g, 1.5), const(g, 1.5), const(g, 0), const(g, 1),
                              params=SolveParams(max_iterations=1))
        assert not res.converged and res.iterations <= 1

    def test_maximum_principle(self):
        g = build_grid(Domain("disk", 1.0), 48)
        f = ScalarField.from_function(g, lambda x: np.exp(-20 * ((x - 0.3) ** 2).sum(axis=1)))
        res = solve_dirichlet(const(g, 1.7), const(g, 1.9), const(g, 0.3), f)
        assert res.converged and res.u.values.min() >= -1e-8

    def test_comparison(self):
        g = build_grid(Domain("disk", 1.0), 32)
        fields = (const(g, 1.8), const(g, 1.9), const(g, 0.3))
        u1 = solve_dirichlet(*fields, const(g, 1.0)).u.values
        u2 = solve_dirichlet(*fields, const(g, 2.0)).u.values
        assert np.all(u2 >= u1 - 1e-6)

    def test_scaling_covariance(self):
        g = build_grid(Domain("disk", 1.0), 48)
        base = solve_dirichlet(const(g, 1.8), const(g, 1.8), const(g, 0), const(g, 1)).u.values
        lam = 8.0
        scaled = solve_dirichlet(const(g, 1.8), const(g, 1.8), const(g, 0), const(g, lam)).u.values
        ref = lam ** (1 / 0.8) * base
        assert np.abs(scaled - ref).max() / np.abs(ref).max() <= 0.01

    def test_square_domain(self):
        g = build_grid(Domain("square", 1.0), 32)
        res = solve_dirichlet(const(g, 2), const(g, 2), const(g, 0), const(g, 1))
        # series value of the torsion function at the centre of the unit square
        assert eval_field(res.u, (0.5, 0.5)) == pytest.approx(0.0736713532, rel=5e-3)

    def test_jacobi_method_agrees(self):
        g = build_grid(Domain("disk", 1.0), 16)
        fields = (const(g, 1.8), const(g, 1.9), const(g, 0.2), const(g, 1))
        a = solve_dirichlet(*fields).u.values
        b = solve_dirichlet(*fields, params=SolveParams(method="jacobi", max_iterations=20000)).u
        assert np.abs(a - b.values).max() <= 1e-4 * np.abs(a).max()

    def test_csv_export(self, poisson64, tmp_path):
        g, res = poisson64
        path = tmp_path / "u.csv"
        write_solution_csv(res, path)
        rows = path.read_text().splitlines()
        assert rows[0] == "x1,x2,u" and len(rows) == 1 + g.mask.sum()


class TestRadial:
    def test_poisson_n3(self):
        stack = LayerStack((Layer(0, 1, 2, 2, 0),), 0.1)
        res = solve_radial(stack, 1.0, 3)
        assert res.converged
        assert eval_field(res.u, (0.0,)) == pytest.approx(1 / 6, abs=2e-3)

    def test_plaplace_profile(self):
        stack = LayerStack((Layer(0, 1, 1.5, 1.5, 0),), 0.1)
        res = solve_radial(stack, 1.0, 2, resolution=256)
        exact = analytic_radial_plaplace(1.5, 2, 1.0, 1.0)(res.u.grid.coords[:, 0])
        assert np.abs(res.u.values - exact).max() <= 2e-3

    def test_constant_boundary(self):
        stack = LayerStack((Layer(0, 1, 1.8, 1.9, 0.3),), 0.1)
        res = solve_radial(stack, 0.0, 3, boundary_value=3.0, resolution=64)
        assert np.all(res.u.values == 3.0)

    def test_cable(self):
        res = solve_radial(preset_cable(), 1.0, 3, resolution=256)
        u = res.u.values
        assert res.converged and u.min() >= -1e-8
        assert np.all(np.diff(u) <= 1e-12)


class TestAnalytic:
    def test_poisson(self):
        u = analytic_radial_plaplace(2, 2, 1.0, 1.0)
        r = np.linspace(0, 1, 11)
        assert np.allclose(u(r), (1 - r**2) / 4)

    def test_p15(self):
        assert analytic_radial_plaplace(1.5, 2, 1.0, 1.0)(0.0) == pytest.approx(1 / 12)

    def test_zero(self):
        assert np.all(analytic_radial_plaplace(1.7, 3, 0.0, 1.0)(np.linspace(0, 1, 5)) == 0)

    @given(st.floats(1.2, 4.0), st.integers(2, 4), st.floats(0.1, 5.0))
    def test_solves_radial_ode(self, p, n, c):
        # r^(n-1) |u'|^(p-2) u' = -c r^n / n
        u = analytic_radial_plaplace(p, n, c, 1.0)
        r, h = 0.6, 1e-6
        du = (u(r + h) - u(r - h)) / (2 * h)
        assert r ** (n - 1) * abs(du) ** (p - 2) * du == pytest.approx(-c * r**n / n, rel=1e-5)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.floats(1.3, 2.5), st.floats(0.0, 1.0))
def test_gradient_fd_property(seed, p, amp):
    g = build_grid(Domain("square", 1.0), 6)
    rng = np.random.default_rng(seed)
    u = ScalarField(g, rng.random(g.size))
    pf, qf = const(g, p), const(g, p + 0.2)
    a = ScalarField(g, amp * rng.random(g.size))
    f = const(g, 1.0)
    grad = energy_gradient(u, pf, qf, a, f, 1e-2).values
    fd = _fd_gradient(u, pf, qf, a, f, 1e-2)
    assert np.abs(grad - fd).max() <= 1e-6 * max(np.abs(fd).max(), 1.0)
