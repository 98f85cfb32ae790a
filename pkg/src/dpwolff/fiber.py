"""Layered fiber and cable scenarios.

A scenario names a domain, a layer stack (a preset or explicit layers), a
right-hand side, solver and potential settings, and the points and radii at
which the pointwise estimates are checked.  Configs are JSON documents::

    {
      "domain": {"kind": "disk", "radius": 1.0, "n": 2, "resolution": 128},
      "preset": "fiber",
      "alpha": 1.0,
      "f": {"kind": "constant", "value": 1.0},
      "boundary_value": 0.0,
      "solver": {"tol": 1e-7, "max_iter": 500},
      "wolff": {"j_max": 40, "tail_tol": 1e-3, "integral_mode": "quadrature"},
      "evaluate": {"points": [[0, 0]], "radii": [0.1], "f_scales": [1]}
    }
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields as dc_fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .bounds import VerificationProblem, WolffSettings, sweep
from .geometry import (
    Domain, ExponentSummary, GeometryError, Layer, LayerStack, ScalarField,
    build_grid, build_layered_fields, eval_field, holder_seminorm, validate_exponents,
)
from .solver import SolveParams, solve_dirichlet, solve_radial
from .wolff import ConstantDensity, RadialGaussianDensity, wolff_constant


class ConfigError(ValueError):
    """Schema violation, reported with the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


# ---------------------------------------------------------------------------
# presets


def preset_fiber() -> LayerStack:
    """Three-material fiber (core, cladding, buffer) for planar runs."""
    return LayerStack(
        (
            Layer(0.0, 0.4, 1.8, 1.9, 0.0, "core: GeO2-doped silica"),
            Layer(0.4, 0.7, 1.85, 1.92, 0.3, "cladding: silica"),
            Layer(0.7, 1.0, 1.9, 1.95, 0.5, "buffer: acrylate"),
        ),
        delta=0.05,
    )


def preset_cable() -> LayerStack:
    """Five-layer cable, intended for radial runs with n = 3."""
    return LayerStack(
        (
            Layer(0.0, 0.25, 1.85, 2.0, 0.0, "core: GeO2-doped silica"),
            Layer(0.25, 0.45, 1.9, 2.05, 0.2, "cladding: silica"),
            Layer(0.45, 0.65, 1.95, 2.1, 0.35, "buffer: acrylate"),
            Layer(0.65, 0.85, 2.0, 2.15, 0.5, "strength members: aramid"),
            Layer(0.85, 1.0, 2.0, 2.2, 0.6, "jacket: polymer"),
        ),
        delta=0.04,
    )


PRESETS = {"fiber": preset_fiber, "cable": preset_cable}
PRESET_DIMENSION = {"fiber": 2, "cable": 3}


# ---------------------------------------------------------------------------
# config schema


@dataclass(frozen=True)
class DomainConfig:
    kind: str = "disk"
    radius: float = 1.0
    inner_radius: float = 0.0
    n: int = 2
    resolution: int = 128


@dataclass(frozen=True)
class FSpec:
    kind: str = "constant"
    value: float = 1.0
    amplitude: float = 1.0
    center_radius: float = 0.0
    width: float = 0.1
    path: str = ""


@dataclass(frozen=True)
class SolverConfig:
    epsilon: Optional[float] = None
    tol: float = 1e-7
    max_iter: int = 500
    continuation: bool = True
    method: str = "kacanov"
    armijo: float = 1e-4
    backtrack: float = 0.5

    def params(self) -> SolveParams:
        return SolveParams(self.epsilon, self.tol, self.max_iter, self.armijo,
                           self.backtrack, self.continuation, self.method)


@dataclass(frozen=True)
class WolffConfig:
    j_max: int = 40
    tail_tol: float = 1e-3
    integral_mode: str = "quadrature"


@dataclass(frozen=True)
class EvaluateConfig:
    points: tuple = ((0.0, 0.0),)
    radii: tuple = (0.1,)
    f_scales: tuple = (1.0,)
    profile_points: int = 64


@dataclass(frozen=True)
class ScenarioConfig:
    domain: DomainConfig = DomainConfig()
    preset: Optional[str] = None
    layers: Optional[tuple] = None
    delta: Optional[float] = None
    alpha: float = 1.0
    f: FSpec = FSpec()
    boundary_value: float = 0.0
    solver: SolverConfig = SolverConfig()
    wolff: WolffConfig = WolffConfig()
    evaluate: EvaluateConfig = EvaluateConfig()
    seed: int = 0

    def to_dict(self) -> dict:
        out = asdict(self)
        if self.layers is not None:
            out["layers"] = [asdict(l) for l in self.layers]
        out["evaluate"]["points"] = [list(p) for p in self.evaluate.points]
        out["evaluate"]["radii"] = list(self.evaluate.radii)
        out["evaluate"]["f_scales"] = list(self.evaluate.f_scales)
        return out

    def domain_object(self) -> Domain:
        d = self.domain
        return Domain(d.kind, d.radius, d.inner_radius, d.n)

    def stack(self, h: float) -> LayerStack:
        """Resolved layer stack; ``delta`` defaults to the preset's or ``4 h``."""
        if self.preset is not None:
            base = PRESETS[self.preset]()
            layers, delta = base.layers, base.delta
        else:
            layers, delta = self.layers, 4 * h
        if self.delta is not None:
            delta = self.delta
        center = (0.0,) if self.domain.kind == "radial" else tuple(self.domain_object().center)
        return LayerStack(layers, delta, center)


_SECTIONS = {"domain": DomainConfig, "f": FSpec, "solver": SolverConfig,
             "wolff": WolffConfig, "evaluate": EvaluateConfig}


def _number(value, path, integer=False, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if integer:
        if int(value) != value:
            raise ConfigError(path, "expected an integer")
        return int(value)
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(path, "must be finite")
    return value


def _section(cls, raw, path):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(path, "expected an object")
    known = {f.name: f for f in dc_fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{path}.{key}", "unknown field")
    values = {}
    for name, spec in known.items():
        if name not in raw:
            continue
        v = raw[name]
        p = f"{path}.{name}"
        default = spec.default
        if name == "epsilon":
            v = _number(v, p, allow_none=True)
        elif isinstance(default, bool):
            if not isinstance(v, bool):
                raise ConfigError(p, "expected true or false")
        elif isinstance(default, int):
            v = _number(v, p, integer=True)
        elif isinstance(default, float):
            v = _number(v, p)
        elif isinstance(default, str):
            if not isinstance(v, str):
                raise ConfigError(p, "expected a string")
        values[name] = v
    return cls(**values)


def _number_list(raw, path, positive=False):
    if not isinstance(raw, (list, tuple)):
        raise ConfigError(path, "expected a list")
    out = tuple(_number(v, f"{path}[{i}]") for i, v in enumerate(raw))
    if positive:
        for i, v in enumerate(out):
            if not v > 0:
                raise ConfigError(f"{path}[{i}]", "must be positive")
    return out


def _evaluate(raw, path):
    if raw is None:
        return EvaluateConfig()
    if not isinstance(raw, dict):
        raise ConfigError(path, "expected an object")
    for key in raw:
        if key not in ("points", "radii", "f_scales", "profile_points"):
            raise ConfigError(f"{path}.{key}", "unknown field")
    base = EvaluateConfig()
    points = base.points
    if "points" in raw:
        if not isinstance(raw["points"], (list, tuple)):
            raise ConfigError(f"{path}.points", "expected a list of points")
        points = tuple(
            _number_list(p if isinstance(p, (list, tuple)) else [p], f"{path}.points[{i}]")
            for i, p in enumerate(raw["points"]))
    radii = _number_list(raw["radii"], f"{path}.radii", True) if "radii" in raw else base.radii
    scales = (_number_list(raw["f_scales"], f"{path}.f_scales", True)
              if "f_scales" in raw else base.f_scales)
    count = base.profile_points
    if "profile_points" in raw:
        count = _number(raw["profile_points"], f"{path}.profile_points", integer=True)
        if count < 2:
            raise ConfigError(f"{path}.profile_points", "need at least 2 samples")
    return EvaluateConfig(points, radii, scales, count)


def _layers(raw, path):
    if not isinstance(raw, (list, tuple)) or not raw:
        raise ConfigError(path, "expected a non-empty list of layers")
    out = []
    for i, item in enumerate(raw):
        p = f"{path}[{i}]"
        if not isinstance(item, dict):
            raise ConfigError(p, "expected an object")
        for key in item:
            if key not in ("r_inner", "r_outer", "p", "q", "a", "name"):
                raise ConfigError(f"{p}.{key}", "unknown field")
        try:
            vals = {k: _number(item[k], f"{p}.{k}") for k in ("r_inner", "r_outer", "p", "q", "a")}
        except KeyError as exc:
            raise ConfigError(f"{p}.{exc.args[0]}", "missing required field") from None
        out.append(Layer(**vals, name=str(item.get("name", ""))))
    return tuple(out)


def load_config(text, base_dir=None) -> ScenarioConfig:
    """Parse and validate a scenario document (JSON text or an already-parsed dict)."""
    if isinstance(text, dict):
        raw = text
    else:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("", "top level must be an object")
    allowed = {f.name for f in dc_fields(ScenarioConfig)}
    for key in raw:
        if key not in allowed:
            raise ConfigError(key, "unknown field")

    sections = {name: _section(cls, raw.get(name), name)
                for name, cls in _SECTIONS.items() if name != "evaluate"}
    evaluate = _evaluate(raw.get("evaluate"), "evaluate")

    preset = raw.get("preset")
    layers = None
    if preset is not None and not isinstance(preset, str):
        raise ConfigError("preset", "expected a preset name")
    if preset is not None and preset not in PRESETS:
        raise ConfigError("preset", f"unknown preset {preset!r} (known: {sorted(PRESETS)})")
    if raw.get("layers") is not None:
        if preset is not None:
            raise ConfigError("layers", "give either a preset or explicit layers, not both")
        layers = _layers(raw["layers"], "layers")
    elif preset is None:
        raise ConfigError("preset", "missing required field (or give 'layers')")

    delta = _number(raw["delta"], "delta", allow_none=True) if "delta" in raw else None
    alpha = _number(raw.get("alpha", 1.0), "alpha")
    if not 0 < alpha <= 1:
        raise ConfigError("alpha", "must lie in (0, 1]")
    boundary = _number(raw.get("boundary_value", 0.0), "boundary_value")
    if boundary < 0:
        raise ConfigError("boundary_value", "must be nonnegative")
    seed = _number(raw.get("seed", 0), "seed", integer=True)

    dom = sections["domain"]
    if dom.kind not in ("disk", "annulus", "square", "radial"):
        raise ConfigError("domain.kind", f"unknown domain kind {dom.kind!r}")
    if dom.kind != "radial" and dom.n != 2:
        raise ConfigError("domain.n", "planar domains have n = 2")
    if dom.resolution < 4:
        raise ConfigError("domain.resolution", "must be at least 4")
    if not dom.radius > 0:
        raise ConfigError("domain.radius", "must be positive")

    fs = sections["f"]
    if fs.kind not in ("constant", "radial_gaussian", "nodal"):
        raise ConfigError("f.kind", f"unknown right-hand side kind {fs.kind!r}")
    if fs.kind == "constant" and fs.value < 0:
        raise ConfigError("f.value", "right-hand side must be nonnegative")
    if fs.kind == "radial_gaussian":
        if fs.amplitude < 0:
            raise ConfigError("f.amplitude", "right-hand side must be nonnegative")
        if not fs.width > 0:
            raise ConfigError("f.width", "must be positive")
    if fs.kind == "nodal":
        if not fs.path:
            raise ConfigError("f.path", "missing required field for nodal data")
        if base_dir is not None and not Path(fs.path).is_absolute():
            fs = replace(fs, path=str(Path(base_dir) / fs.path))

    wolff = sections["wolff"]
    if wolff.integral_mode not in ("quadrature", "analytic"):
        raise ConfigError("wolff.integral_mode", "expected 'quadrature' or 'analytic'")
    if wolff.integral_mode == "analytic" and fs.kind == "nodal":
        raise ConfigError("wolff.integral_mode", "nodal data has no closed-form ball integrals")
    if wolff.j_max < 0:
        raise ConfigError("wolff.j_max", "must be >= 0")
    if sections["solver"].method not in ("kacanov", "jacobi"):
        raise ConfigError("solver.method", "expected 'kacanov' or 'jacobi'")
    try:
        sections["solver"].params()
    except ValueError as exc:
        raise ConfigError("solver", str(exc)) from None

    config = ScenarioConfig(dom, preset, layers, delta, alpha, fs, boundary,
                            sections["solver"], wolff, evaluate, seed)
    try:
        config.stack(config.domain_object().extent / dom.resolution)
    except GeometryError as exc:
        msg = str(exc)
        path, _, rest = msg.partition(": ")
        if rest and (path.startswith("layers") or path == "delta"):
            raise ConfigError(path, rest) from None
        raise ConfigError("layers", msg) from None
    return config


def expand_preset(raw: dict) -> dict:
    """Replace ``preset`` by explicit ``layers`` so that layer overrides apply."""
    raw = dict(raw)
    name = raw.pop("preset", None)
    if name is None:
        return raw
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}")
    stack = PRESETS[name]()
    raw["layers"] = [asdict(l) for l in stack.layers]
    raw.setdefault("delta", stack.delta)
    return raw


# ---------------------------------------------------------------------------
# scenario runs


def build_f(spec: FSpec, grid, scale: float = 1.0) -> ScalarField:
    if spec.kind == "constant":
        return ScalarField.constant(grid, spec.value * scale)
    if spec.kind == "radial_gaussian":
        r = grid.radii
        vals = spec.amplitude * np.exp(-0.5 * ((r - spec.center_radius) / spec.width) ** 2)
        return ScalarField(grid, vals * scale)
    vals = read_nodal(spec.path)
    idx = np.flatnonzero(grid.mask)
    if vals.size == idx.size:
        full = np.zeros(grid.size)
        full[idx] = vals
        vals = full
    elif vals.size != grid.size:
        raise ConfigError("f.path", f"{vals.size} values do not match the grid "
                                    f"({idx.size} domain nodes)")
    if np.any(vals < 0):
        raise ConfigError("f.path", "right-hand side must be nonnegative")
    return ScalarField(grid, vals * scale)


def read_nodal(path) -> np.ndarray:
    """Last column of a CSV file with a header row, or a .npy array."""
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path).astype(float).ravel()
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([float(r[-1]) for r in rows[1:] if r], dtype=float)


def build_density(spec: FSpec, grid):
    """Closed-form density matching :func:`build_f`, for analytic ball integrals."""
    dom = grid.domain
    support = dom.extent if dom.kind in ("disk", "radial") else None
    center = tuple(dom.center)
    if spec.kind == "constant":
        if dom.kind == "annulus":
            raise ConfigError("wolff.integral_mode", "no closed form on an annulus")
        return ConstantDensity(spec.value, grid.n, support, center)
    if spec.kind == "radial_gaussian":
        if dom.kind in ("annulus", "square"):
            raise ConfigError("wolff.integral_mode", "closed-form Gaussian needs a disk or radial domain")
        return RadialGaussianDensity(spec.amplitude, spec.center_radius, spec.width,
                                     grid.n, support, center)
    raise ConfigError("wolff.integral_mode", "nodal data has no closed-form ball integrals")


@dataclass
class Scenario:
    """Built objects for a config: grid, stack, fields, data and summaries."""

    config: ScenarioConfig
    grid: object
    stack: LayerStack
    fields: tuple
    f: ScalarField
    density: object
    seminorm: object
    summary: ExponentSummary
    validation: object

    def solve(self, scale: float = 1.0):
        cfg = self.config
        f = self.f * scale
        params = cfg.solver.params()
        if self.grid.kind == "radial":
            return solve_radial(self.stack, f, self.grid.n, cfg.boundary_value, params,
                                grid=self.grid)
        return solve_dirichlet(*self.fields, f, cfg.boundary_value, params)

    def problem(self) -> VerificationProblem:
        w = self.config.wolff
        return VerificationProblem(self.fields, self.f, self.summary, self.solve,
                                   self.density, WolffSettings(w.j_max, w.tail_tol))


def build_scenario(config: ScenarioConfig) -> Scenario:
    grid = build_grid(config.domain_object(), config.domain.resolution)
    stack = config.stack(grid.h)
    fields = build_layered_fields(stack, grid)
    semi = holder_seminorm(fields[2], config.alpha, seed=config.seed)
    summary = ExponentSummary.from_fields(fields[0], fields[1], config.alpha, semi.value)
    validation = validate_exponents(summary)
    f = build_f(config.f, grid)
    density = build_density(config.f, grid) if config.wolff.integral_mode == "analytic" else None
    return Scenario(config, grid, stack, fields, f, density, semi, summary, validation)


@dataclass
class ScenarioReport:
    config: ScenarioConfig
    validation: object
    seminorm: object
    summary: ExponentSummary
    solves: dict
    reports: list
    sweep_summary: dict
    verification_skipped: bool
    scenario: Scenario = field(repr=False, default=None)
    solutions: dict = field(repr=False, default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "validation": {
                "valid": self.validation.valid,
                "threshold": self.validation.threshold,
                "clauses": dict(self.validation.clauses),
            },
            "holder_seminorm": {"value": self.seminorm.value,
                                "sampled": self.seminorm.sampled},
            "exponents": asdict(self.summary),
            "solves": [{"f_scale": s, **summary} for s, summary in self.solves.items()],
            "verification_skipped": self.verification_skipped,
            "reports": [r.to_dict() for r in self.reports],
            "sweep_summary": self.sweep_summary,
        }


def center_value(solution) -> float:
    grid = solution.u.grid
    return eval_field(solution.u, grid.domain.center)


def run_scenario(config: ScenarioConfig, workers: int = 1) -> ScenarioReport:
    """Build fields, check the exponent condition, solve and verify every point.

    Verification is skipped (and flagged) when the exponents are not
    admissible; the solve still runs.
    """
    sc = build_scenario(config)
    problem = sc.problem()
    ev = config.evaluate
    skipped = not sc.validation.valid
    if skipped:
        for scale in ev.f_scales:
            problem.solution(scale)
        reports, summary = [], {}
    else:
        table = sweep(problem, list(ev.points), list(ev.radii), list(ev.f_scales), workers)
        reports, summary = table.reports, table.summary
    solutions = {s: problem.solution(s) for s in ev.f_scales}
    solves = {}
    for s, sol in solutions.items():
        solves[s] = {**sol.summary(), "u_center": center_value(sol)}
    return ScenarioReport(config, sc.validation, sc.seminorm, sc.summary, solves, reports,
                          summary, skipped, sc, solutions)


def ray_profile(report: ScenarioReport, rho: Optional[float] = None,
                count: Optional[int] = None):
    """Samples ``(r, u, W_pminus(., rho))`` along the ray from the center along +x1."""
    sc = report.scenario
    cfg = report.config
    rho = cfg.evaluate.radii[0] if rho is None else rho
    count = cfg.evaluate.profile_points if count is None else count
    grid = sc.grid
    sol = report.solutions[cfg.evaluate.f_scales[0]]
    center = grid.domain.center
    dom = grid.domain
    if dom.kind == "square":
        r_max = dom.extent / 2
    else:
        r_max = dom.extent
    r_min = dom.inner_radius if dom.kind == "annulus" else 0.0
    rows = []
    src = sc.density if sc.density is not None else sc.f
    for r in np.linspace(r_min, r_max, count):
        x = center.copy()
        x[0] += r
        u = eval_field(sol.u, x)
        w = wolff_constant(src, x, rho, sc.summary.p_minus, sc.summary.n,
                           cfg.wolff.j_max, cfg.wolff.tail_tol).value
        rows.append((float(r), u, w))
    return rows
