"""Grids, layered coefficient fields and ball-local queries.

Two grid kinds are supported:

* ``cartesian2d`` -- a uniform node lattice over a square, with a disk or
  annulus mask for round domains.  Elements are the bilinear cells whose four
  corners are all inside the mask.
* ``radial`` -- nodes ``r_k = k h`` on ``[0, R]`` describing a radially
  symmetric function in ``R^n``.  Integrals carry the shell measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import special


class GeometryError(ValueError):
    """Rejected grid, field or layer input."""


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def unit_sphere_area(n: int) -> float:
    return n * unit_ball_volume(n)


@dataclass(frozen=True)
class Domain:
    """Computational domain.

    ``kind`` is one of ``square`` (``[0, extent]^2``), ``disk`` and
    ``annulus`` (centered at the origin) or ``radial`` (``0 <= r <= radius``
    in ``R^n``).
    """

    kind: str
    extent: float = 1.0
    inner_radius: float = 0.0
    n: int = 2

    def __post_init__(self):
        if self.kind not in ("square", "disk", "annulus", "radial"):
            raise GeometryError(f"unknown domain kind {self.kind!r}")
        if not self.extent > 0 or not math.isfinite(self.extent):
            raise GeometryError("domain extent must be positive")
        if self.kind == "annulus" and not 0 < self.inner_radius < self.extent:
            raise GeometryError("annulus needs 0 < inner_radius < radius")
        if self.kind != "radial" and self.n != 2:
            raise GeometryError("cartesian domains are two-dimensional")
        if self.n < 2:
            raise GeometryError("dimension n must be >= 2")

    @property
    def center(self) -> np.ndarray:
        if self.kind == "square":
            return np.full(2, self.extent / 2)
        if self.kind == "radial":
            return np.zeros(1)
        return np.zeros(2)

    def distance_to_boundary(self, x0) -> float:
        """Distance from ``x0`` to the boundary of the continuous domain."""
        x0 = np.asarray(x0, dtype=float)
        if self.kind == "square":
            return float(min(x0.min(), (self.extent - x0).min()))
        r = float(np.linalg.norm(x0))
        if self.kind == "annulus":
            return min(self.extent - r, r - self.inner_radius)
        return self.extent - r


@dataclass(frozen=True, eq=False)
class Grid:
    kind: str
    h: float
    coords: np.ndarray
    n: int
    mask: np.ndarray
    boundary: np.ndarray
    domain: Domain
    shape: tuple = ()

    @property
    def size(self) -> int:
        return self.coords.shape[0]

    @property
    def interior(self) -> np.ndarray:
        return self.mask & ~self.boundary

    @property
    def radii(self) -> np.ndarray:
        """Node distance from the domain center."""
        return np.linalg.norm(self.coords - self.domain.center, axis=1)

    def cells(self) -> np.ndarray:
        """Active elements as an array of node indices.

        Cartesian cells are listed with corners ordered (SW, SE, NW, NE);
        radial cells are node pairs.
        """
        if self.kind == "radial":
            k = np.arange(self.size - 1)
            return np.stack([k, k + 1], axis=1)
        ny, nx = self.shape
        idx = np.arange(self.size).reshape(ny, nx)
        corners = np.stack(
            [idx[:-1, :-1], idx[:-1, 1:], idx[1:, :-1], idx[1:, 1:]], axis=-1
        ).reshape(-1, 4)
        return corners[self.mask[corners].all(axis=1)]


def build_grid(domain: Domain, resolution: int) -> Grid:
    """Uniform grid with ``h = extent / resolution``.

    For disks and annuli the extent is the side of the bounding square,
    ``2 * radius``.  Boundary nodes are mask nodes with an excluded
    edge neighbour, plus nodes on the square edge; for radial grids only
    ``r = R`` is a boundary node.  A cell missing a corner is dropped, so an
    interior node next to the curved boundary may lose one of its cells.
    """
    if int(resolution) != resolution or resolution < 4:
        raise GeometryError("resolution must be an integer >= 4")
    resolution = int(resolution)

    if domain.kind == "radial":
        h = domain.extent / resolution
        r = np.arange(resolution + 1) * h
        r[-1] = domain.extent
        mask = np.ones(resolution + 1, dtype=bool)
        boundary = np.zeros(resolution + 1, dtype=bool)
        boundary[-1] = True
        return Grid("radial", h, r[:, None], domain.n, mask, boundary, domain,
                    (resolution + 1,))

    if domain.kind == "square":
        side, lo = domain.extent, 0.0
    else:
        side, lo = 2 * domain.extent, -domain.extent
    h = side / resolution
    ticks = lo + np.arange(resolution + 1) * h
    ticks[-1] = lo + side
    X, Y = np.meshgrid(ticks, ticks)
    coords = np.column_stack([X.ravel(), Y.ravel()])

    m = resolution + 1
    if domain.kind == "square":
        mask2 = np.ones((m, m), dtype=bool)
    else:
        # small slack so nodes exactly on the circle are kept
        rr = np.hypot(X, Y)
        tol = 1e-12 * domain.extent
        mask2 = rr <= domain.extent + tol
        if domain.kind == "annulus":
            mask2 &= rr >= domain.inner_radius - tol

    padded = np.zeros((m + 2, m + 2), dtype=bool)
    padded[1:-1, 1:-1] = mask2
    full = np.ones_like(mask2)
    for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        full &= padded[1 + di : m + 1 + di, 1 + dj : m + 1 + dj]
    boundary2 = mask2 & ~full
    return Grid("cartesian2d", h, coords, 2, mask2.ravel(), boundary2.ravel(),
                domain, (m, m))


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.size,):
            raise GeometryError(
                f"field has {values.size} values, grid has {self.grid.size} nodes")
        if not np.all(np.isfinite(values)):
            raise GeometryError("field values must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.size, float(value)))

    @classmethod
    def from_function(cls, grid: Grid, func) -> "ScalarField":
        """Sample ``func(coords)`` (coords of shape ``(N, d)``) at the nodes."""
        return cls(grid, np.broadcast_to(func(grid.coords), (grid.size,)))

    def __mul__(self, scale: float) -> "ScalarField":
        return ScalarField(self.grid, self.values * float(scale))

    __rmul__ = __mul__

    def __add__(self, other: "ScalarField") -> "ScalarField":
        if other.grid is not self.grid:
            raise GeometryError("fields live on different grids")
        return ScalarField(self.grid, self.values + other.values)


# ---------------------------------------------------------------------------
# layered coefficients


@dataclass(frozen=True)
class Layer:
    r_inner: float
    r_outer: float
    p: float
    q: float
    a: float
    name: str = ""


@dataclass(frozen=True)
class LayerStack:
    layers: tuple
    delta: float
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not layers:
            raise GeometryError("layer stack is empty")
        if layers[0].r_inner != 0:
            raise GeometryError("layers[0].r_inner: first layer must start at r = 0")
        for i, layer in enumerate(layers):
            if not layer.r_outer > layer.r_inner:
                raise GeometryError(f"layers[{i}]: r_outer must exceed r_inner")
            if not layer.p > 1:
                raise GeometryError(f"layers[{i}].p: exponent must exceed 1")
            if not layer.q >= layer.p:
                raise GeometryError(f"layers[{i}].q: q must be >= p")
            if not layer.a >= 0:
                raise GeometryError(f"layers[{i}].a: coefficient must be >= 0")
            if i and not math.isclose(layer.r_inner, layers[i - 1].r_outer,
                                      rel_tol=0, abs_tol=1e-12):
                raise GeometryError(
                    f"layers[{i}].r_inner: layers must be contiguous "
                    f"({layers[i - 1].r_outer} != {layer.r_inner})")
        if not self.delta > 0:
            raise GeometryError("delta: transition width must be positive")
        thinnest = min(l.r_outer - l.r_inner for l in layers)
        if len(layers) > 1 and not self.delta < thinnest:
            raise GeometryError("delta: transition width must be smaller than the thinnest layer")

    @property
    def outer_radius(self) -> float:
        return self.layers[-1].r_outer

    def exponent_bounds(self):
        """(p_minus, p_plus, q_minus, q_plus) over the layer constants."""
        ps = [l.p for l in self.layers]
        qs = [l.q for l in self.layers]
        return min(ps), max(ps), min(qs), max(qs)

    def profile(self, r, attr: str) -> np.ndarray:
        """Mollified radial profile of ``attr`` ('p', 'q' or 'a')."""
        r = np.asarray(r, dtype=float)
        values = [getattr(l, attr) for l in self.layers]
        out = np.full(r.shape, values[0], dtype=float)
        half = self.delta / 2
        for i, layer in enumerate(self.layers[:-1]):
            ri = layer.r_outer
            lo, hi = values[i], values[i + 1]
            t = np.clip((r - (ri - half)) / self.delta, 0.0, 1.0)
            ramp = lo + (hi - lo) * t
            # piecewise assignment keeps plateaus exactly constant
            out = np.where(r >= ri - half, ramp, out)
        return out


def build_layered_fields(stack: LayerStack, grid: Grid):
    """Return ``(p_field, q_field, a_field)`` for ``stack`` on ``grid``.

    Inside a layer the fields equal the layer constants; within ``delta/2``
    of an interface they ramp linearly in ``r`` between neighbouring
    constants.  Nodes outside the mask take the outermost layer values.
    """
    if grid.kind == "radial":
        r = grid.coords[:, 0]
    else:
        r = np.linalg.norm(grid.coords - np.asarray(stack.center), axis=1)
    reach = float(r[grid.mask].max())
    slack = 1e-9 * max(1.0, stack.outer_radius)
    if reach > stack.outer_radius + slack:
        raise GeometryError(
            f"grid reaches r = {reach:.6g} beyond the stack outer radius "
            f"{stack.outer_radius:.6g}")
    if stack.outer_radius > reach + 2 * grid.h + slack:
        raise GeometryError(
            f"grid (r <= {reach:.6g}) does not cover the stack outer radius "
            f"{stack.outer_radius:.6g}")
    return tuple(ScalarField(grid, stack.profile(r, attr)) for attr in ("p", "q", "a"))


# ---------------------------------------------------------------------------
# exponent bookkeeping


@dataclass(frozen=True)
class ExponentSummary:
    p_minus: float
    p_plus: float
    q_minus: float
    q_plus: float
    alpha: float
    holder_seminorm: float
    n: int

    def __post_init__(self):
        if not (self.p_minus <= self.p_plus and self.q_minus <= self.q_plus):
            raise GeometryError("exponent summary: minus bounds exceed plus bounds")
        if not min(self.p_minus, self.q_minus) > 1:
            raise GeometryError("exponent summary: exponents must exceed 1")
        if self.holder_seminorm < 0:
            raise GeometryError("exponent summary: negative seminorm")

    @classmethod
    def from_fields(cls, p_field, q_field, alpha, seminorm, n=None):
        mask = p_field.grid.mask
        p = p_field.values[mask]
        q = q_field.values[mask]
        return cls(float(p.min()), float(p.max()), float(q.min()), float(q.max()),
                   float(alpha), float(seminorm), int(n or p_field.grid.n))


@dataclass(frozen=True)
class ValidationReport:
    valid: bool
    clauses: dict
    threshold: float

    def rows(self):
        return list(self.clauses.items())


def validate_exponents(summary: ExponentSummary) -> ValidationReport:
    """Check the admissibility chain for the growth exponents.

    ``1 < p- <= p+ <= q- <= q+ <= min(p- + alpha, n(p- - 1)/(n - p-))`` and
    ``q+ < n``.  When ``p- >= n`` the Sobolev quotient is taken as ``+inf``.
    """
    s = summary
    n = s.n
    if not 0 < s.alpha <= 1:
        raise GeometryError("alpha must lie in (0, 1]")
    sobolev = math.inf if s.p_minus >= n else n * (s.p_minus - 1) / (n - s.p_minus)
    threshold = min(s.p_minus + s.alpha, sobolev)
    clauses = {
        "1 < p_minus": 1 < s.p_minus,
        "p_minus <= p_plus": s.p_minus <= s.p_plus,
        "p_plus <= q_minus": s.p_plus <= s.q_minus,
        "q_minus <= q_plus": s.q_minus <= s.q_plus,
        "q_plus <= threshold": s.q_plus <= threshold,
        "q_plus < n": s.q_plus < n,
    }
    return ValidationReport(all(clauses.values()), clauses, threshold)


# ---------------------------------------------------------------------------
# Hölder seminorm


class HolderSeminorm(NamedTuple):
    value: float
    sampled: bool
    pairs: int


PAIR_LIMIT = 200_000


def _pair_sup(values, coords, alpha, chunk=2048):
    """Exact sup of |v_i - v_j| / |x_i - x_j|^alpha over all pairs."""
    best = 0.0
    m = len(values)
    for start in range(0, m, chunk):
        v = values[start : start + chunk]
        x = coords[start : start + chunk]
        dv = np.abs(v[:, None] - values[None, :])
        dist = np.linalg.norm(x[:, None, :] - coords[None, :, :], axis=-1)
        ok = dist > 0
        if ok.any():
            best = max(best, float((dv[ok] / dist[ok] ** alpha).max()))
    return best


def holder_seminorm(a_field: ScalarField, alpha: float, seed: int = 0,
                    n_random: int = 100_000) -> HolderSeminorm:
    """Discrete ``[a]_{C^{0,alpha}}`` over mask nodes.

    Exact when the pair count is below ``PAIR_LIMIT``.  Otherwise the
    supremum is taken over all pairs on the two axis sections through the
    domain center, all neighbouring pairs, and ``n_random`` random pairs
    drawn with ``seed``; the result is then a lower estimate.
    """
    if not 0 < alpha <= 1:
        raise GeometryError("alpha must lie in (0, 1]")
    grid = a_field.grid
    idx = np.flatnonzero(grid.mask)
    values = a_field.values[idx]
    coords = grid.coords[idx]
    m = len(idx)
    npairs = m * (m - 1) // 2
    if np.ptp(values) == 0:
        return HolderSeminorm(0.0, False, npairs)
    # radial functions: the sup along a ray is the sup over R^n
    if npairs <= PAIR_LIMIT or grid.kind == "radial":
        return HolderSeminorm(_pair_sup(values, coords, alpha), False, npairs)

    ny, nx = grid.shape
    c = grid.domain.center
    ci = int(round((c[1] - grid.coords[0, 1]) / grid.h))
    cj = int(round((c[0] - grid.coords[0, 0]) / grid.h))
    ids = np.arange(grid.size).reshape(ny, nx)
    best = 0.0
    count = 0
    for section in (ids[ci, :], ids[:, cj], np.diagonal(ids)):
        sec = section[grid.mask[section]]
        best = max(best, _pair_sup(a_field.values[sec], grid.coords[sec], alpha))
        count += len(sec) * (len(sec) - 1) // 2

    corners = grid.cells()
    neighbour_pairs = np.concatenate(
        [corners[:, [0, 1]], corners[:, [0, 2]], corners[:, [0, 3]], corners[:, [1, 2]]])
    rng = np.random.default_rng(seed)
    random_pairs = rng.integers(0, m, size=(n_random, 2))
    random_pairs = idx[random_pairs]
    pairs = np.concatenate([neighbour_pairs, random_pairs])
    dv = np.abs(a_field.values[pairs[:, 0]] - a_field.values[pairs[:, 1]])
    dist = np.linalg.norm(grid.coords[pairs[:, 0]] - grid.coords[pairs[:, 1]], axis=1)
    ok = dist > 0
    best = max(best, float((dv[ok] / dist[ok] ** alpha).max()))
    count += int(ok.sum())
    return HolderSeminorm(best, True, count)


# ---------------------------------------------------------------------------
# point and ball queries


def _as_point(grid: Grid, point) -> np.ndarray:
    x = np.atleast_1d(np.asarray(point, dtype=float))
    if grid.kind == "radial":
        return np.array([np.linalg.norm(x)])
    if x.shape != (2,):
        raise GeometryError(f"expected a 2D point, got {point!r}")
    return x


def eval_field(field: ScalarField, point) -> float:
    """Bilinear (cartesian) or linear (radial) interpolation at ``point``.

    Radial grids accept a radius or any coordinate vector, whose norm is used.
    """
    grid = field.grid
    x = _as_point(grid, point)
    v = field.values
    eps = 1e-12 * grid.h
    if grid.kind == "radial":
        r = x[0]
        if r > grid.coords[-1, 0] + eps:
            raise GeometryError(f"point r={r} outside the radial domain")
        k = min(int(r / grid.h), grid.size - 2)
        t = (r - grid.coords[k, 0]) / grid.h
        return float((1 - t) * v[k] + t * v[k + 1])

    ny, nx = grid.shape
    x0, y0 = grid.coords[0]
    s = (x[0] - x0) / grid.h
    t = (x[1] - y0) / grid.h
    if not (-eps <= s <= nx - 1 + eps and -eps <= t <= ny - 1 + eps):
        raise GeometryError(f"point {tuple(x)} outside the grid")
    j = min(max(int(math.floor(s)), 0), nx - 2)
    i = min(max(int(math.floor(t)), 0), ny - 2)
    s -= j
    t -= i
    corners = np.array([i * nx + j, i * nx + j + 1, (i + 1) * nx + j, (i + 1) * nx + j + 1])
    if not grid.mask[corners].all():
        # Allow points sitting on a mask node or edge between mask nodes.
        weights = np.array([(1 - s) * (1 - t), s * (1 - t), (1 - s) * t, s * t])
        used = weights > 1e-12
        if not grid.mask[corners[used]].all():
            raise GeometryError(f"point {tuple(x)} outside the domain")
    w = np.array([(1 - s) * (1 - t), s * (1 - t), (1 - s) * t, s * t])
    return float(w @ v[corners])


def cap_fraction(r, d: float, rho: float, n: int) -> np.ndarray:
    """Fraction of the sphere ``|x| = r`` in ``R^n`` lying in ``B_rho(y)``, ``|y| = d``."""
    r = np.asarray(r, dtype=float)
    out = np.zeros(r.shape)
    inside = r + d <= rho
    out[inside] = 1.0
    if d == 0:
        out[r <= rho] = 1.0
        return out
    partial = (~inside) & (np.abs(r - d) < rho) & (r > 0)
    if partial.any():
        rp = r[partial]
        cos_t = np.clip((rp**2 + d**2 - rho**2) / (2 * rp * d), -1.0, 1.0)
        sin2 = 1 - cos_t**2
        half = 0.5 * special.betainc((n - 1) / 2, 0.5, sin2)
        out[partial] = np.where(cos_t >= 0, half, 1 - half)
    return out


def ball_integral(field: ScalarField, x0, rho: float) -> float:
    """Midpoint quadrature of ``field`` over ``B_rho(x0)``, zero outside the domain."""
    if not rho > 0:
        raise GeometryError("rho must be positive")
    grid = field.grid
    x = _as_point(grid, x0)
    cells = grid.cells()
    mid = field.values[cells].mean(axis=1)
    if grid.kind == "radial":
        n = grid.n
        r0 = grid.coords[cells[:, 0], 0]
        r1 = grid.coords[cells[:, 1], 0]
        shells = unit_ball_volume(n) * (r1**n - r0**n)
        frac = cap_fraction(0.5 * (r0 + r1), float(x[0]), rho, n)
        frac[r1 + x[0] <= rho] = 1.0
        return float(np.dot(shells * frac, mid))
    centers = grid.coords[cells].mean(axis=1)
    inside = np.sum((centers - x) ** 2, axis=1) <= rho**2
    return float(grid.h**2 * mid[inside].sum())


def ball_nodes(grid: Grid, x0, rho: float) -> np.ndarray:
    """Indices of mask nodes at distance <= rho from ``x0``."""
    x = _as_point(grid, x0)
    if grid.kind == "radial":
        dist = np.abs(grid.coords[:, 0] - x[0])
    else:
        dist = np.linalg.norm(grid.coords - x, axis=1)
    return np.flatnonzero(grid.mask & (dist <= rho * (1 + 1e-12)))


def ball_min(field: ScalarField, x0, rho: float) -> float:
    """Minimum nodal value over mask nodes in the closed ball ``B_rho(x0)``."""
    nodes = ball_nodes(field.grid, x0, rho)
    if nodes.size == 0:
        raise GeometryError(f"no grid node within {rho} of {x0}")
    return float(field.values[nodes].min())


def ball_max(field: ScalarField, x0, rho: float) -> float:
    nodes = ball_nodes(field.grid, x0, rho)
    if nodes.size == 0:
        return float(eval_field(field, x0))
    return float(field.values[nodes].max())
