"""Energy minimization for the variable-exponent double-phase equation.

The discrete problem minimizes

    J(u) = int |grad u|^p(x) / p(x) + a(x) |grad u|^q(x) / q(x) - f u dx

over nodal values of a continuous piecewise (bi)linear ``u`` with fixed
Dirichlet data, where ``|grad u|`` is smoothed to ``sqrt(|grad u|^2 + eps^2)``.
Its first variation is the flux ``(|grad u|^(p-2) + a |grad u|^(q-2)) grad u``
tested against the nodal hat functions.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import (
    Grid, ScalarField, LayerStack, build_layered_fields,
    unit_sphere_area,
)

logger = logging.getLogger(__name__)

_GAUSS = 0.5 + np.array([-1.0, 1.0]) / (2 * math.sqrt(3.0))


class SolverError(ValueError):
    """Rejected solver input."""


class _Assembly:
    """Element data shared by energy, gradient and the lagged-diffusivity matrix."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self.cells = grid.cells()
        h = grid.h
        g1, g2 = _GAUSS
        if grid.kind == "radial":
            s = _GAUSS
            self.N = np.stack([1 - s, s], axis=1)                     # (G, k)
            self.D = np.tile(np.array([[-1.0, 1.0]]) / h, (2, 1))[:, None, :]
            r0 = grid.coords[self.cells[:, 0], 0]
            rg = r0[:, None] + s[None, :] * h
            self.W = unit_sphere_area(grid.n) * (h / 2) * rg ** (grid.n - 1)
        else:
            s = np.array([g1, g2, g1, g2])
            t = np.array([g1, g1, g2, g2])
            self.N = np.stack([(1 - s) * (1 - t), s * (1 - t), (1 - s) * t, s * t], axis=1)
            ds = np.stack([-(1 - t), 1 - t, -t, t], axis=1) / h
            dt = np.stack([-(1 - s), -s, 1 - s, s], axis=1) / h
            self.D = np.stack([ds, dt], axis=1)                        # (G, 2, k)
            self.W = np.full((len(self.cells), 4), h * h / 4)
        k = self.cells.shape[1]
        self.rows = np.repeat(self.cells, k, axis=1).ravel()
        self.cols = np.tile(self.cells, (1, k)).ravel()

    def at_gauss(self, values: np.ndarray) -> np.ndarray:
        return values[self.cells] @ self.N.T

    def gradient_at_gauss(self, u: np.ndarray) -> np.ndarray:
        return np.einsum("ck,gdk->cgd", u[self.cells], self.D)

    def scatter(self, local: np.ndarray) -> np.ndarray:
        return np.bincount(self.cells.ravel(), weights=local.ravel(),
                           minlength=self.grid.size)

    def matrix(self, coef: np.ndarray) -> sp.csr_matrix:
        """Sum over Gauss points of ``W * coef * D^T D``."""
        local = np.einsum("cg,gdk,gdl->ckl", self.W * coef, self.D, self.D)
        size = self.grid.size
        return sp.coo_matrix((local.ravel(), (self.rows, self.cols)),
                             shape=(size, size)).tocsr()


_ASSEMBLY_CACHE: dict = {}


def _assembly(grid: Grid) -> _Assembly:
    key = id(grid)
    cached = _ASSEMBLY_CACHE.get(key)
    if cached is None or cached.grid is not grid:
        if len(_ASSEMBLY_CACHE) > 8:
            _ASSEMBLY_CACHE.clear()
        cached = _ASSEMBLY_CACHE[key] = _Assembly(grid)
    return cached


@dataclass(frozen=True)
class Coefficients:
    """Exponent and weight fields sampled at the quadrature points."""

    p: np.ndarray
    q: np.ndarray
    a: np.ndarray
    f: np.ndarray


def _coefficients(asm, p_field, q_field, a_field, f) -> Coefficients:
    grid = asm.grid
    for fld in (p_field, q_field, a_field, f):
        if fld.grid is not grid:
            raise SolverError("all fields must share one grid")
    P = asm.at_gauss(p_field.values)
    Q = asm.at_gauss(q_field.values)
    if P.min() <= 1 or Q.min() <= 1:
        raise SolverError("exponents must exceed 1 at every quadrature point")
    return Coefficients(P, Q, asm.at_gauss(a_field.values), asm.at_gauss(f.values))


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, ScalarField) else np.asarray(u, dtype=float)


def _smoothed_norm(grad, eps):
    return np.sqrt(np.sum(grad * grad, axis=-1) + eps * eps)


def _energy(asm, c: Coefficients, u: np.ndarray, eps: float, per_cell=False):
    t = _smoothed_norm(asm.gradient_at_gauss(u), eps)
    dens = t**c.p / c.p + c.a * t**c.q / c.q - c.f * asm.at_gauss(u)
    contrib = asm.W * dens
    return contrib.sum(axis=1) if per_cell else float(contrib.sum())


def _diffusivity(t, c: Coefficients):
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = t ** (c.p - 2) + c.a * t ** (c.q - 2)
    return np.where(t > 0, coef, 0.0)


def _gradient(asm, c: Coefficients, u: np.ndarray, eps: float):
    grad = asm.gradient_at_gauss(u)
    t = _smoothed_norm(grad, eps)
    coef = _diffusivity(t, c)
    flux = (asm.W * coef)[..., None] * grad
    local = np.einsum("cgd,gdk->ck", flux, asm.D) - (asm.W * c.f) @ asm.N
    g = asm.scatter(local)
    g[~asm.grid.interior] = 0.0
    return g, t, coef


def energy(u, p_field, q_field, a_field, f, eps: float = 0.0) -> float:
    """Discrete double-phase energy of ``u`` (2x2 Gauss per cell, 2-point radial)."""
    if eps < 0:
        raise SolverError("eps must be >= 0")
    grid = p_field.grid
    if isinstance(u, ScalarField) and u.grid is not grid:
        raise SolverError("all fields must share one grid")
    asm = _assembly(grid)
    c = _coefficients(asm, p_field, q_field, a_field, f)
    return _energy(asm, c, _values(u), eps)


def energy_gradient(u, p_field, q_field, a_field, f, eps: float = 0.0) -> ScalarField:
    """Partial derivatives of :func:`energy` w.r.t. interior nodal values.

    Boundary and excluded nodes carry zero.
    """
    if eps < 0:
        raise SolverError("eps must be >= 0")
    grid = p_field.grid
    if isinstance(u, ScalarField) and u.grid is not grid:
        raise SolverError("all fields must share one grid")
    asm = _assembly(grid)
    c = _coefficients(asm, p_field, q_field, a_field, f)
    g, _, _ = _gradient(asm, c, _values(u), eps)
    return ScalarField(grid, g)


def stiffness_matrix(grid: Grid, coef: float = 1.0) -> sp.csr_matrix:
    """Linear-element stiffness matrix ``int coef grad phi_i . grad phi_j``."""
    asm = _assembly(grid)
    return asm.matrix(np.full(asm.W.shape, float(coef)))


def load_vector(f: ScalarField) -> np.ndarray:
    """``int f phi_i`` with ``f`` interpolated in the element space."""
    asm = _assembly(f.grid)
    return asm.scatter((asm.W * asm.at_gauss(f.values)) @ asm.N)


# ---------------------------------------------------------------------------
# minimization


@dataclass(frozen=True)
class SolveParams:
    """Optimizer settings.

    ``epsilon=None`` selects ``max(1e-6 * sup|boundary| / diameter, 1e-8)``.
    ``method`` is ``"kacanov"`` (lagged-diffusivity preconditioner, a sparse
    solve per step) or ``"jacobi"`` (its diagonal only).
    """

    epsilon: Optional[float] = None
    tol: float = 1e-7
    max_iterations: int = 500
    armijo: float = 1e-4
    backtrack: float = 0.5
    continuation: bool = True
    method: str = "kacanov"

    def __post_init__(self):
        if not self.tol > 0:
            raise SolverError("tol must be positive")
        if not 0 < self.backtrack < 1:
            raise SolverError("backtrack ratio must lie in (0, 1)")
        if not 0 < self.armijo < 1:
            raise SolverError("Armijo slope factor must lie in (0, 1)")
        if self.epsilon is not None and self.epsilon < 0:
            raise SolverError("epsilon must be >= 0")
        if self.max_iterations < 0:
            raise SolverError("max_iterations must be >= 0")
        if self.method not in ("kacanov", "jacobi"):
            raise SolverError(f"unknown method {self.method!r}")


@dataclass
class SolveResult:
    u: ScalarField
    energy: float
    energy_history: list
    gradient_norm: float
    gradient_scale: float
    weak_residual: float
    iterations: int
    converged: bool
    epsilon: float
    nonnegative: bool = True
    messages: list = field(default_factory=list)

    def summary(self) -> dict:
        vals = self.u.values[self.u.grid.mask]
        out = {
            "energy": self.energy,
            "iterations": self.iterations,
            "converged": self.converged,
            "gradient_norm": self.gradient_norm,
            "gradient_scale": self.gradient_scale,
            "weak_residual": self.weak_residual,
            "epsilon": self.epsilon,
            "nonnegative": self.nonnegative,
            "u_min": float(vals.min()),
            "u_max": float(vals.max()),
        }
        if self.messages:
            out["messages"] = list(self.messages)
        return out


def default_epsilon(grid: Grid, boundary: np.ndarray) -> float:
    diameter = 2 * grid.domain.extent if grid.kind != "square" else grid.domain.extent
    if grid.kind == "radial":
        diameter = 2 * grid.domain.extent
    gscale = float(np.abs(boundary[grid.boundary]).max(initial=0.0)) / diameter
    return max(1e-6 * gscale, 1e-8)


def _jacobi_diagonal(asm, coef):
    return np.bincount(
        asm.cells.ravel(),
        weights=np.einsum("cg,gdk,gdk->ck", asm.W * coef, asm.D, asm.D).ravel(),
        minlength=asm.grid.size)


def _direction(asm, coef, g, interior, method):
    d = np.zeros_like(g)
    diag = _jacobi_diagonal(asm, coef)[interior]
    if method == "jacobi":
        d[interior] = -g[interior] / diag
        return d
    K = asm.matrix(coef)[interior][:, interior]
    rhs = -g[interior]
    precond = spla.LinearOperator(K.shape, matvec=lambda x: x / diag, dtype=float)
    x, info = spla.cg(K, rhs, rtol=1e-10, atol=0.0, M=precond, maxiter=20 * K.shape[0])
    if info != 0:
        x = spla.spsolve(K.tocsc(), rhs)
    d[interior] = x
    return d


def _delta_energy(asm, c, t_old, ds, dlin):
    """Energy change when ``t^2`` moves by ``ds`` and ``int f u`` by ``dlin``.

    Written with log1p/expm1 so that tiny decreases near the minimizer are
    resolved relative to themselves rather than to the total energy.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        lp = np.log1p(ds / t_old**2)
        dp = t_old**c.p / c.p * np.expm1(0.5 * c.p * lp)
        dq = c.a * t_old**c.q / c.q * np.expm1(0.5 * c.q * lp)
    zero = t_old == 0
    if zero.any():
        t_new = np.sqrt(np.maximum(ds, 0.0))
        dp = np.where(zero, t_new**c.p / c.p, dp)
        dq = np.where(zero, c.a * t_new**c.q / c.q, dq)
    return float(np.sum(asm.W * (dp + dq - dlin)))


def _minimize(asm, c, u, J, eps, threshold, params, history, max_iterations):
    interior = asm.grid.interior
    g, t, coef = _gradient(asm, c, u, eps)
    gnorm = float(np.abs(g).max(initial=0.0))
    it = 0
    while gnorm > threshold and it < max_iterations:
        d = _direction(asm, coef, g, interior, params.method)
        slope = float(g @ d)
        if not slope < 0:
            break
        grad_u = asm.gradient_at_gauss(u)
        grad_d = asm.gradient_at_gauss(d)
        f_d = c.f * asm.at_gauss(d)

        def change(step):
            delta = step * grad_d
            ds = np.sum(delta * (2 * grad_u + delta), axis=-1)
            return _delta_energy(asm, c, t, ds, step * f_d)

        step = 1.0
        dJ = change(step)
        while not (dJ < 0 and dJ <= params.armijo * step * slope):
            step *= params.backtrack
            if step < 1e-14:
                break
            dJ = change(step)
        else:
            # lagged diffusivity undershoots for exponents below 2
            while step < 8:
                trial = change(2 * step)
                if not trial < dJ:
                    break
                step, dJ = 2 * step, trial
        if step < 1e-14:
            logger.debug("line search stalled at |g| = %.3e", gnorm)
            break
        u = u + step * d
        J = J + dJ
        history.append(J)
        it += 1
        g, t, coef = _gradient(asm, c, u, eps)
        gnorm = float(np.abs(g).max(initial=0.0))
    return u, J, gnorm, it


def _solve(grid, p_field, q_field, a_field, f, boundary_value, params):
    params = params or SolveParams()
    for fld in (p_field, q_field, a_field, f):
        if fld.grid is not grid:
            raise SolverError("all fields must share one grid")
    if np.any(f.values[grid.mask] < 0):
        raise SolverError("right-hand side f must be nonnegative")
    if isinstance(boundary_value, ScalarField):
        bvals = boundary_value.values.copy()
    else:
        bvals = np.full(grid.size, float(boundary_value))
    if np.any(bvals[grid.boundary] < 0):
        raise SolverError("boundary data must be nonnegative")
    if p_field.values[grid.mask].min() <= 1 or q_field.values[grid.mask].min() <= 1:
        raise SolverError("exponent fields must exceed 1")

    asm = _assembly(grid)
    c = _coefficients(asm, p_field, q_field, a_field, f)
    interior = grid.interior
    u = np.where(grid.boundary, bvals, 0.0)
    if grid.boundary.any():
        u[interior] = bvals[grid.boundary].mean()
    u[~grid.mask] = 0.0

    eps = params.epsilon if params.epsilon is not None else default_epsilon(grid, bvals)
    stages = [eps * 1e4, eps * 1e2, eps] if params.continuation and eps > 0 else [eps]

    g0, _, _ = _gradient(asm, c, u, stages[0])
    scale = max(float(np.abs(g0).max(initial=0.0)), 1e-12)
    threshold = params.tol * scale

    J = _energy(asm, c, u, stages[0])
    history = [J]
    iterations = 0
    for k, e in enumerate(stages):
        last = k == len(stages) - 1
        stage_threshold = threshold if last else 100 * threshold
        u, J, gnorm, it = _minimize(asm, c, u, J, e, stage_threshold, params, history,
                                    params.max_iterations - iterations)
        iterations += it
        if not last:
            # a smaller eps lowers the energy of the same iterate
            t = _smoothed_norm(asm.gradient_at_gauss(u), e)
            J += _delta_energy(asm, c, t, np.full(t.shape, stages[k + 1] ** 2 - e**2), 0.0)
            history.append(J)

    u_field = ScalarField(grid, u)
    residual = weak_residual(u_field, p_field, q_field, a_field, f, eps=eps)
    converged = gnorm <= threshold
    messages = []
    if not converged:
        messages.append(
            f"gradient sup-norm {gnorm:.3e} above {threshold:.3e} after {iterations} iterations")
    floor = -10 * params.tol * max(1.0, float(np.abs(u[grid.mask]).max(initial=0.0)))
    nonneg = bool(u[grid.mask].min() >= floor)
    if not nonneg:
        messages.append(f"solution minimum {u[grid.mask].min():.3e} below {floor:.3e}")
    return SolveResult(u_field, J, history, gnorm, scale, residual, iterations,
                       converged, eps, nonneg, messages)


def solve_dirichlet(p_field, q_field, a_field, f, boundary_value=0.0,
                    params: Optional[SolveParams] = None) -> SolveResult:
    """Minimize the discrete energy over interior values with fixed boundary data.

    Each step takes the lagged-diffusivity (or its diagonal) preconditioned
    negative gradient and backtracks until the Armijo condition holds.
    Iteration stops once ``sup |grad J| <= tol * sup |grad J(u_0)|``.
    """
    return _solve(p_field.grid, p_field, q_field, a_field, f, boundary_value, params)


def solve_radial(stack: LayerStack, f_radial, n: int, boundary_value: float = 0.0,
                 params: Optional[SolveParams] = None, resolution: int = 512,
                 grid: Optional[Grid] = None) -> SolveResult:
    """Radially symmetric solve in ``R^n`` for a layered stack.

    ``f_radial`` is a callable of ``r``, a number, or a field on a radial grid.
    The origin carries the natural condition; ``r = R`` is Dirichlet.
    """
    from .geometry import Domain, build_grid

    if n < 2:
        raise SolverError("dimension n must be >= 2")
    if grid is None:
        grid = build_grid(Domain("radial", stack.outer_radius, n=n), resolution)
    elif grid.kind != "radial" or grid.n != n:
        raise SolverError("solve_radial needs a radial grid of matching dimension")
    p_field, q_field, a_field = build_layered_fields(stack, grid)
    if isinstance(f_radial, ScalarField):
        f = f_radial
    elif callable(f_radial):
        f = ScalarField(grid, f_radial(grid.coords[:, 0]))
    else:
        f = ScalarField.constant(grid, f_radial)
    return _solve(grid, p_field, q_field, a_field, f, boundary_value, params)


# ---------------------------------------------------------------------------
# weak form


def _bumps(grid: Grid):
    """Three smooth bumps with unit maximum, vanishing on the boundary."""
    c = grid.domain.center
    if grid.kind == "radial":
        R = grid.domain.extent
        r = grid.coords[:, 0]
        specs = [(0.0, 0.5 * R), (0.4 * R, 0.35 * R), (0.7 * R, 0.25 * R)]
        dist = [np.abs(r - m) for m, _ in specs]
    else:
        R = grid.domain.extent / (2 if grid.kind == "square" else 1)
        offsets = [(0.0, 0.0), (0.3 * R, 0.1 * R), (-0.2 * R, -0.35 * R)]
        widths = [0.6 * R, 0.4 * R, 0.35 * R]
        specs = list(zip(offsets, widths))
        dist = [np.linalg.norm(grid.coords - (c + np.array(o)), axis=1) for o, _ in specs]
    out = []
    for d, (_, w) in zip(dist, specs):
        z = np.clip(1 - (d / w) ** 2, 0.0, None)
        phi = z**2
        phi[~grid.interior] = 0.0
        if phi.max() > 0:
            out.append(phi / phi.max())
    return out


def weak_residual(u, p_field, q_field, a_field, f, test_functions=None,
                  eps: float = 0.0) -> float:
    """Largest weak-form defect over a test set.

    For each test function ``phi`` the defect
    ``|int A(x, grad u) . grad phi - int f phi| / (1 + max|phi|)`` is computed.
    The default set holds the hat function of every interior node plus three
    smooth bumps.
    """
    grid = p_field.grid
    g = energy_gradient(u, p_field, q_field, a_field, f, eps=eps).values
    if test_functions is None:
        best = float(np.abs(g[grid.interior]).max(initial=0.0)) / 2
        phis = _bumps(grid)
    else:
        best = 0.0
        phis = [_values(phi) for phi in test_functions]
    for phi in phis:
        phi = np.where(grid.interior, phi, 0.0)
        scale = 1 + float(np.abs(phi).max(initial=0.0))
        best = max(best, abs(float(g @ phi)) / scale)
    return best


# ---------------------------------------------------------------------------
# closed forms and export


def analytic_radial_plaplace(p: float, n: int, c: float, R: float) -> Callable:
    """Radial solution of ``-div(|grad u|^(p-2) grad u) = c`` with ``u(R) = 0``.

    ``u(r) = (p-1)/p * (c/n)^(1/(p-1)) * (R^(p/(p-1)) - r^(p/(p-1)))``
    """
    if not p > 1:
        raise SolverError("p must exceed 1")
    if c < 0 or not R > 0:
        raise SolverError("need c >= 0 and R > 0")
    k = p / (p - 1)
    amp = (p - 1) / p * (c / n) ** (1 / (p - 1))

    def profile(r):
        r = np.asarray(r, dtype=float)
        return amp * (R**k - np.abs(r) ** k)

    return profile


def write_solution_csv(result: SolveResult, path) -> None:
    grid = result.u.grid
    idx = np.flatnonzero(grid.mask)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if grid.kind == "radial":
            writer.writerow(["r", "u"])
            for i in idx:
                writer.writerow([repr(float(grid.coords[i, 0])), repr(float(result.u.values[i]))])
        else:
            writer.writerow(["x1", "x2", "u"])
            for i in idx:
                x, y = grid.coords[i]
                writer.writerow([repr(float(x)), repr(float(y)), repr(float(result.u.values[i]))])
