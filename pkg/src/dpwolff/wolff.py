"""Dyadic nonlinear Wolff potentials.

For a nonnegative density ``f`` the potential with exponent ``p`` is

    W(x0, R) = sum_j (rho_j^(p-n) * int_{B(x0, rho_j)} f)^(1/(p-1)),   rho_j = R / 2^j

and for a measure ``mu`` with order ``beta``

    W(x0, R) = sum_j (mu(B(x0, rho_j)) / rho_j^(n - beta p))^(1/(p-1)).

The ball integrals come either from grid quadrature (a :class:`ScalarField`)
or from a closed form (:class:`ConstantDensity`, :class:`RadialGaussianDensity`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy import integrate

from .geometry import (
    ScalarField, ball_integral, ball_max, eval_field,
    unit_ball_volume, unit_sphere_area,
)

CONVERGED = "converged"
DIVERGENT = "divergent"
TAIL_DOMINATED = "tail-dominated"

_VALUE_FLOOR = 1e-300


class WolffError(ValueError):
    """Rejected potential input."""


# ---------------------------------------------------------------------------
# closed-form densities


_GL_NODES = 16
_ANGLE_NODES = 192


def _radial_ball_integral(profile, d, rho, n, support, scale=None):
    """int over B(y, rho), |y| = d, of a radial profile cut off at ``support``.

    Centred balls reduce to a 1D integral.  Otherwise the ball is swept in
    polar coordinates about ``y``: Gauss-Legendre in the polar angle and
    composite Gauss-Legendre along each ray, which stops where it leaves the
    support.  ``scale`` is the length on which the profile varies.
    """
    area = unit_sphere_area(n)
    if d <= 1e-14 * max(rho, 1.0):
        top = rho if support is None else min(rho, support)
        return integrate.quad(lambda r: profile(r) * r ** (n - 1), 0.0, top,
                              epsabs=0.0, epsrel=1e-13, limit=400)[0] * area
    # split the angle where rays start to leave the support (a kink)
    breaks = [0.0, np.pi]
    if support is not None:
        c = (support**2 - d**2 - rho**2) / (2 * d * rho)
        if -1 < c < 1:
            breaks.insert(1, math.acos(c))
    x, w = np.polynomial.legendre.leggauss(_ANGLE_NODES // (len(breaks) - 1))
    phi = np.concatenate([(a + b) / 2 + (b - a) / 2 * x for a, b in zip(breaks, breaks[1:])])
    w_phi = np.concatenate([(b - a) / 2 * w for a, b in zip(breaks, breaks[1:])])
    w_phi = w_phi * np.sin(phi) ** (n - 2) * unit_sphere_area(n - 1)
    cos = np.cos(phi)
    smax = np.full_like(phi, rho)
    if support is not None:
        disc = support**2 - d**2 * (1 - cos**2)
        exit_ = -d * cos + np.sqrt(np.clip(disc, 0.0, None))
        smax = np.clip(np.minimum(smax, exit_), 0.0, None)
    panels = 1 if scale is None else int(min(64, max(1, math.ceil(2 * rho / scale))))
    xs, ws = np.polynomial.legendre.leggauss(_GL_NODES)
    edges = np.linspace(0.0, 1.0, panels + 1)
    t = ((edges[:-1, None] + edges[1:, None]) / 2 + (edges[1:, None] - edges[:-1, None]) / 2 * xs).ravel()
    wt = ((edges[1:, None] - edges[:-1, None]) / 2 * ws).ravel()
    s = smax[:, None] * t[None, :]
    r = np.sqrt(np.clip(d**2 + s**2 + 2 * d * s * cos[:, None], 0.0, None))
    inner = (profile(r) * s ** (n - 1) * wt).sum(axis=1) * smax
    return float(inner @ w_phi)


@dataclass(frozen=True)
class ConstantDensity:
    """``f = value`` on the ball ``|x - center| <= support_radius`` (all of R^n if None)."""

    value: float
    n: int = 2
    support_radius: Optional[float] = None
    center: tuple = ()

    def _offset(self, x0):
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        c = np.asarray(self.center, dtype=float) if self.center else np.zeros_like(x0)
        return float(np.linalg.norm(x0 - c))

    def ball_integral(self, x0, rho: float) -> float:
        d = self._offset(x0)
        if self.support_radius is None or d + rho <= self.support_radius:
            return self.value * unit_ball_volume(self.n) * rho**self.n
        return _radial_ball_integral(lambda r: np.full_like(r, self.value, dtype=float), d,
                                     rho, self.n, self.support_radius)

    def sup_in_ball(self, x0, rho: float) -> float:
        return max(self.value, 0.0)

    def scaled(self, factor: float) -> "ConstantDensity":
        return ConstantDensity(self.value * factor, self.n, self.support_radius, self.center)


@dataclass(frozen=True)
class RadialGaussianDensity:
    """``f = amplitude * exp(-(|x - center| - center_radius)^2 / (2 width^2))``."""

    amplitude: float
    center_radius: float
    width: float
    n: int = 2
    support_radius: Optional[float] = None
    center: tuple = ()

    def profile(self, r):
        return self.amplitude * np.exp(-0.5 * ((r - self.center_radius) / self.width) ** 2)

    def ball_integral(self, x0, rho: float) -> float:
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        c = np.asarray(self.center, dtype=float) if self.center else np.zeros_like(x0)
        d = float(np.linalg.norm(x0 - c))
        return _radial_ball_integral(self.profile, d, rho, self.n, self.support_radius,
                                     self.width)

    def sup_in_ball(self, x0, rho: float) -> float:
        return max(self.amplitude, 0.0)

    def scaled(self, factor: float) -> "RadialGaussianDensity":
        return RadialGaussianDensity(self.amplitude * factor, self.center_radius, self.width,
                                     self.n, self.support_radius, self.center)


def _check_density(f):
    if isinstance(f, ScalarField):
        if np.any(f.values[f.grid.mask] < 0):
            raise WolffError("density must be nonnegative")
        return f.grid.h, f.grid.n
    if getattr(f, "value", 0.0) < 0 or getattr(f, "amplitude", 0.0) < 0:
        raise WolffError("density must be nonnegative")
    return 0.0, f.n


def _mass(f, x0, rho):
    if isinstance(f, ScalarField):
        return ball_integral(f, x0, rho)
    return f.ball_integral(x0, rho)


def _sup(f, x0, rho):
    if isinstance(f, ScalarField):
        return ball_max(f, x0, rho)
    return f.sup_in_ball(x0, rho)


# ---------------------------------------------------------------------------
# results


@dataclass
class WolffResult:
    value: float
    terms: list
    truncation_index: int
    tail_bound: float
    status: str
    exponent: float
    radius: float
    partial_sum: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    def to_dict(self) -> dict:
        value = self.value if math.isfinite(self.value) else "inf"
        return {
            "value": value,
            "terms": list(self.terms),
            "truncation_index": self.truncation_index,
            "tail_bound": self.tail_bound if math.isfinite(self.tail_bound) else "inf",
            "status": self.status,
            "exponent": self.exponent,
            "radius": self.radius,
            "partial_sum": self.partial_sum,
        }


def _status(value, tail, tail_tol):
    return CONVERGED if tail <= tail_tol * max(value, _VALUE_FLOOR) else TAIL_DOMINATED


def _dyadic_radii(R, h, j_max):
    """``R / 2^j`` for j = 0..J: stops at ``j_max`` or before the first radius below ``h``."""
    radii = [R]
    for j in range(1, j_max + 1):
        rho = R / 2.0**j
        if rho < h:
            break
        radii.append(rho)
    return radii


def wolff_constant(f, x0, R: float, p: float, n: Optional[int] = None,
                   j_max: int = 40, tail_tol: float = 1e-3) -> WolffResult:
    """Wolff potential of ``f`` with a constant exponent ``p``.

    The tail beyond the last resolved radius is bounded by treating ``f`` as
    its supremum on that ball, which makes the remaining terms geometric.
    """
    if not p > 1:
        raise WolffError("exponent p must exceed 1")
    if not R > 0:
        raise WolffError("radius R must be positive")
    h, fn = _check_density(f)
    n = fn if n is None else n
    if n != fn:
        raise WolffError(f"dimension {n} does not match the density ({fn})")
    s = 1.0 / (p - 1)
    radii = _dyadic_radii(R, h, j_max)
    terms = [(rho ** (p - n) * _mass(f, x0, rho)) ** s for rho in radii]
    value = float(sum(terms))
    last = radii[-1]
    k = p * s
    tail = (_sup(f, x0, last) * unit_ball_volume(n)) ** s * (last / 2) ** k / (1 - 2.0**-k)
    return WolffResult(value, terms, len(radii) - 1, float(tail),
                       _status(value, tail, tail_tol), float(p), float(R), value)


def wolff_variable(f, p_field: ScalarField, x0, R: float, n: Optional[int] = None,
                   j_max: int = 40, tail_tol: float = 1e-3) -> WolffResult:
    """Wolff potential with the exponent field evaluated at ``x0``."""
    p = eval_field(p_field, x0)
    return wolff_constant(f, x0, R, p, n, j_max, tail_tol)


@dataclass(frozen=True)
class MeasureData:
    """A density, point masses ``(location, mass)``, or both."""

    density: object = None
    atoms: tuple = ()

    def __post_init__(self):
        atoms = tuple((tuple(float(c) for c in np.atleast_1d(loc)), float(m))
                      for loc, m in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        for _, m in atoms:
            if not (m >= 0 and math.isfinite(m)):
                raise WolffError("atom masses must be finite and nonnegative")
        if self.density is not None:
            _check_density(self.density)


def _distance(a, b):
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    m = max(len(a), len(b))
    a = np.pad(a, (0, m - len(a)))
    b = np.pad(b, (0, m - len(b)))
    return float(np.linalg.norm(a - b))


def wolff_measure(mu: MeasureData, x0, R: float, beta: float, p: float, n: int,
                  j_max: int = 40, tail_tol: float = 1e-3) -> WolffResult:
    """Wolff potential of order ``beta`` for a measure.

    An atom sitting at ``x0`` makes the terms grow or stay constant when
    ``beta * p <= n``; the result then carries status ``divergent``, value
    ``inf`` and the truncated sum in ``partial_sum``.
    """
    if not p > 1:
        raise WolffError("exponent p must exceed 1")
    if not beta > 0:
        raise WolffError("beta must be positive")
    if not R > 0:
        raise WolffError("radius R must be positive")
    h = 0.0
    if mu.density is not None:
        h, dn = _check_density(mu.density)
        if dn != n:
            raise WolffError(f"dimension {n} does not match the density ({dn})")
    s = 1.0 / (p - 1)
    dists = [(_distance(loc, x0), m) for loc, m in mu.atoms]

    def measure(rho):
        total = _mass(mu.density, x0, rho) if mu.density is not None else 0.0
        return total + sum(m for d, m in dists if d <= rho)

    radii = _dyadic_radii(R, h, j_max)
    terms = [(measure(rho) / rho ** (n - beta * p)) ** s for rho in radii]
    partial = float(sum(terms))
    last = radii[-1] / 2
    centred = sum(m for d, m in dists if d <= 1e-12 * R)
    if centred > 0 and beta * p <= n:
        return WolffResult(math.inf, terms, len(radii) - 1, math.inf, DIVERGENT,
                           float(p), float(R), partial)

    parts = []
    if mu.density is not None:
        k = beta * p * s
        sup = _sup(mu.density, x0, radii[-1])
        parts.append((sup * unit_ball_volume(n)) ** s * last**k / (1 - 2.0**-k))
    m0 = sum(m for d, m in dists if d <= last)
    if m0 > 0:
        k = (beta * p - n) * s
        parts.append(m0**s * last**k / (1 - 2.0**-k) if k > 0 else math.inf)
    tail = sum(parts)
    if len(parts) == 2:
        tail *= 2.0 ** max(s - 1, 0.0)
    return WolffResult(partial, terms, len(radii) - 1, float(tail),
                       _status(partial, tail, tail_tol), float(p), float(R), partial)


class WindowValue(NamedTuple):
    value: float
    raw: float
    outer: WolffResult
    inner: WolffResult


def wolff_window(f, x0, R_outer: float, R_inner: float, p: float,
                 n: Optional[int] = None, j_max: int = 40,
                 tail_tol: float = 1e-3) -> WindowValue:
    """``W(x0, R_outer) - W(x0, R_inner)``, clamped at zero (raw value kept)."""
    if not 0 < R_inner <= R_outer:
        raise WolffError("need 0 < R_inner <= R_outer")
    outer = wolff_constant(f, x0, R_outer, p, n, j_max, tail_tol)
    inner = wolff_constant(f, x0, R_inner, p, n, j_max, tail_tol)
    raw = outer.value - inner.value
    return WindowValue(max(raw, 0.0), raw, outer, inner)
