"""Flat ``key = value`` run configuration and the objects built from it.

One entry per line, ``#`` starts a comment.  Unknown keys, missing required
keys, bad types and violated constraints all raise :class:`ConfigError`
naming the key.  File paths are resolved relative to the config file.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import CompatibilityError, ConfigError, FormatError
from .grid import Grid
from .io import fmt, read_field_csv
from .optimize import (
    ControlProblem,
    ObjectiveSpec,
    OptimizeOptions,
    dipole_source,
    gaussian_dipole_source,
    gaussian_pair_control,
    project_admissible,
    self_consistent_problem,
)
from .solver import COMPAT_TOL, FlowSolver, MediumFields, SolverOptions

REQUIRED = object()

# key -> (kind, default); kind is a type, a tuple of allowed strings, or "point"/"cell"/"path"
SCHEMA = {
    "dim": (int, REQUIRED),
    "nx": (int, REQUIRED),
    "ny": (int, REQUIRED),
    "nz": (int, None),
    "Lx": (float, 1.0),
    "Ly": (float, 1.0),
    "Lz": (float, None),
    "T": (float, REQUIRED),
    "n_steps": (int, REQUIRED),
    "phi": (float, 0.2),
    "phi_file": ("path", None),
    "K": (float, 1.0),
    "K_file": ("path", None),
    "d_m": (float, REQUIRED),
    "d_t": (float, REQUIRED),
    "d_l": (float, REQUIRED),
    "eps_reg": (float, 1e-12),
    "q": (("none", "dipole", "gaussian_dipole", "file"), "none"),
    "q_file": ("path", None),
    "q_inject": ("cell", None),
    "q_extract": ("cell", None),
    "q_inject_at": ("point", None),
    "q_extract_at": ("point", None),
    "q_rate": (float, 1.0),
    "q_width": (float, 0.1),
    "alpha": (float, 0.0),
    "gamma": (float, REQUIRED),
    "target": (("self_consistent", "files"), "self_consistent"),
    "c_d_file": ("path", None),
    "p_d_file": ("path", None),
    "h_star": (("gaussian", "file", "zero"), "gaussian"),
    "h_star_file": ("path", None),
    "h_star_amplitude": (float, 1.0),
    "h_star_width": (float, 0.15),
    "h_star_plus": ("point", None),
    "h_star_minus": ("point", None),
    "pressure_method": (("cg", "direct"), "cg"),
    "pressure_tol": (float, 1e-12),
    "cross_terms": (("implicit", "lagged"), "implicit"),
    "ehat_evaluation": (("cell", "face"), "cell"),
    "max_iters": (int, 200),
    "tol_grad": (float, 1e-6),
    "armijo_c1": (float, 1e-4),
    "max_halvings": (int, 40),
    "grad_check_threshold": (float, 5e-2),
    "grad_check_eps": (float, 1e-3),
    "seed": (int, 0),
    "out_dir": (str, "out"),
    "snapshot_stride": (int, 1),
}


@dataclass
class RunConfig:
    dim: int
    nx: int
    ny: int
    nz: int | None
    Lx: float
    Ly: float
    Lz: float | None
    T: float
    n_steps: int
    phi: float
    phi_file: str | None
    K: float
    K_file: str | None
    d_m: float
    d_t: float
    d_l: float
    eps_reg: float
    q: str
    q_file: str | None
    q_inject: tuple | None
    q_extract: tuple | None
    q_inject_at: tuple | None
    q_extract_at: tuple | None
    q_rate: float
    q_width: float
    alpha: float
    gamma: float
    target: str
    c_d_file: str | None
    p_d_file: str | None
    h_star: str
    h_star_file: str | None
    h_star_amplitude: float
    h_star_width: float
    h_star_plus: tuple | None
    h_star_minus: tuple | None
    pressure_method: str
    pressure_tol: float
    cross_terms: str
    ehat_evaluation: str
    max_iters: int
    tol_grad: float
    armijo_c1: float
    max_halvings: int
    grad_check_threshold: float
    grad_check_eps: float
    seed: int
    out_dir: str
    snapshot_stride: int


def _convert(key, kind, raw: str, base: Path):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            val = float(raw)
            if not np.isfinite(val):
                raise ValueError
            return val
        if kind is str:
            return raw
        if isinstance(kind, tuple):
            if raw not in kind:
                raise ConfigError(f"{key} must be one of {', '.join(kind)}, got {raw!r}", key)
            return raw
        if kind == "path":
            p = Path(raw)
            return str(p if p.is_absolute() else (base / p).resolve())
        parts = raw.replace(",", " ").split()
        if kind == "cell":
            return tuple(int(t) for t in parts)
        return tuple(float(t) for t in parts)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r}", key) from exc


def parse_config_text(text: str, base_dir=".") -> RunConfig:
    base = Path(base_dir)
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r} on line {lineno}", key)
        if key in values:
            raise ConfigError(f"duplicate key {key!r} on line {lineno}", key)
        values[key] = _convert(key, SCHEMA[key][0], raw, base)
    for key, (_, default) in SCHEMA.items():
        if key not in values:
            if default is REQUIRED:
                raise ConfigError(f"missing required key {key!r}", key)
            values[key] = default
    cfg = RunConfig(**values)
    validate_config(cfg)
    return cfg


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, path.parent)


def _require(cond, key, message):
    if not cond:
        raise ConfigError(f"{key}: {message}", key)


def validate_config(cfg: RunConfig) -> None:
    _require(cfg.dim in (2, 3), "dim", "must be 2 or 3")
    if cfg.dim == 3:
        _require(cfg.nz is not None, "nz", "required in 3D")
    else:
        _require(cfg.nz is None, "nz", "only allowed in 3D")
        _require(cfg.Lz is None, "Lz", "only allowed in 3D")
    for key in ("nx", "ny") + (("nz",) if cfg.dim == 3 else ()):
        _require(getattr(cfg, key) >= 4, key, "needs at least 4 cells")
    for key in ("Lx", "Ly", "Lz", "T", "q_width", "h_star_width", "pressure_tol", "grad_check_eps"):
        val = getattr(cfg, key)
        _require(val is None or val > 0, key, "must be positive")
    _require(cfg.n_steps >= 1, "n_steps", "must be >= 1")
    _require(cfg.phi > 0, "phi", "must be positive")
    _require(cfg.K > 0, "K", "must be positive")
    _require(cfg.d_m > 0, "d_m", "must be positive")
    _require(cfg.d_t >= 0, "d_t", "must be >= 0")
    _require(cfg.d_l >= 0, "d_l", "must be >= 0")
    _require(cfg.eps_reg >= 0, "eps_reg", "must be >= 0")
    _require(cfg.alpha >= 0, "alpha", "must be >= 0")
    _require(cfg.gamma > 0, "gamma", "must be > 0")
    _require(cfg.max_iters >= 0, "max_iters", "must be >= 0")
    _require(cfg.tol_grad >= 0, "tol_grad", "must be >= 0")
    _require(0 < cfg.armijo_c1 < 1, "armijo_c1", "must lie in (0, 1)")
    _require(cfg.max_halvings >= 1, "max_halvings", "must be >= 1")
    _require(cfg.grad_check_threshold > 0, "grad_check_threshold", "must be positive")
    _require(cfg.snapshot_stride >= 1, "snapshot_stride", "must be >= 1")
    if cfg.q == "file":
        _require(cfg.q_file is not None, "q_file", "required when q = file")
    if cfg.q == "dipole":
        for key in ("q_inject", "q_extract"):
            val = getattr(cfg, key)
            _require(val is not None and len(val) == cfg.dim, key, f"needs {cfg.dim} cell indices")
    if cfg.target == "files":
        for key in ("c_d_file", "p_d_file"):
            _require(getattr(cfg, key) is not None, key, "required when target = files")
    if cfg.h_star == "file":
        _require(cfg.h_star_file is not None, "h_star_file", "required when h_star = file")
    for key in ("q_inject_at", "q_extract_at", "h_star_plus", "h_star_minus"):
        val = getattr(cfg, key)
        _require(val is None or len(val) == cfg.dim, key, f"needs {cfg.dim} coordinates")
    for key in ("phi_file", "K_file", "q_file", "c_d_file", "p_d_file", "h_star_file"):
        val = getattr(cfg, key)
        _require(val is None or Path(val).is_file(), key, f"file not found: {val}")


def emit_config(cfg: RunConfig) -> str:
    """Text that parses back to an equal :class:`RunConfig`."""
    lines = []
    for f in fields(cfg):
        val = getattr(cfg, f.name)
        if val is None:
            continue
        if isinstance(val, tuple):
            text = " ".join(fmt(v) if isinstance(v, float) else str(v) for v in val)
        elif isinstance(val, float):
            text = fmt(val)
        else:
            text = str(val)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


# builders ---------------------------------------------------------------

def make_grid(cfg: RunConfig) -> Grid:
    if cfg.dim == 2:
        return Grid((cfg.nx, cfg.ny), (cfg.Lx, cfg.Ly))
    return Grid((cfg.nx, cfg.ny, cfg.nz), (cfg.Lx, cfg.Ly, cfg.Lz if cfg.Lz is not None else 1.0))


def _load_field(path, grid, key):
    try:
        return read_field_csv(path, grid)[1]
    except FormatError as exc:
        raise ConfigError(f"{key}: {exc}", key) from exc


def make_medium(cfg: RunConfig, grid: Grid) -> MediumFields:
    phi = _load_field(cfg.phi_file, grid, "phi_file") if cfg.phi_file else np.full(grid.ncells, cfg.phi)
    K = _load_field(cfg.K_file, grid, "K_file") if cfg.K_file else np.full(grid.ncells, cfg.K)
    _require(np.all(phi > 0), "phi_file", "porosity must be positive in every cell")
    _require(np.all(K > 0), "K_file", "permeability must be positive in every cell")
    return MediumFields(phi, K, cfg.d_m, cfg.d_t, cfg.d_l)


def make_solver(cfg: RunConfig, grid: Grid, medium: MediumFields) -> FlowSolver:
    opts = SolverOptions(pressure_method=cfg.pressure_method, pressure_tol=cfg.pressure_tol,
                         cross_terms=cfg.cross_terms, eps_reg=cfg.eps_reg,
                         ehat_evaluation=cfg.ehat_evaluation)
    return FlowSolver(grid, medium, opts)


def _default_points(cfg, a, b):
    return tuple([a] * cfg.dim), tuple([b] * cfg.dim)


def make_source(cfg: RunConfig, grid: Grid) -> np.ndarray:
    if cfg.q == "none":
        return np.zeros(grid.ncells)
    if cfg.q == "dipole":
        for key, idx in (("q_inject", cfg.q_inject), ("q_extract", cfg.q_extract)):
            _require(all(0 <= i < n for i, n in zip(idx, grid.shape)), key, "cell index outside the grid")
        return dipole_source(grid, cfg.q_inject, cfg.q_extract, cfg.q_rate)
    if cfg.q == "gaussian_dipole":
        a, b = _default_points(cfg, 0.15, 0.85)
        a = cfg.q_inject_at or tuple(x * L for x, L in zip(a, grid.lengths))
        b = cfg.q_extract_at or tuple(x * L for x, L in zip(b, grid.lengths))
        return gaussian_dipole_source(grid, a, b, cfg.q_width, cfg.q_rate)
    q = _load_field(cfg.q_file, grid, "q_file")
    if abs(q.sum()) > COMPAT_TOL * max(np.abs(q).sum(), np.finfo(float).tiny):
        raise CompatibilityError(
            f"q_file: source must integrate to zero over the domain with no-flux boundaries "
            f"(mean = {q.mean():.3e})")
    return q - q.mean()


def make_h_star(cfg: RunConfig, grid: Grid) -> np.ndarray:
    N = cfg.n_steps
    if cfg.h_star == "zero":
        return np.zeros((N + 1, grid.ncells))
    if cfg.h_star == "file":
        field = _load_field(cfg.h_star_file, grid, "h_star_file")
        return project_admissible(np.tile(field, (N + 1, 1)))
    # defaults are fractions of the box; explicit points are absolute
    pad = (0.5,) * (cfg.dim - 2)
    a = cfg.h_star_plus or tuple(x * L for x, L in zip((0.3, 0.7) + pad, grid.lengths))
    b = cfg.h_star_minus or tuple(x * L for x, L in zip((0.7, 0.3) + pad, grid.lengths))
    return gaussian_pair_control(grid, N, [a, b], cfg.h_star_width, cfg.h_star_amplitude, cfg.T)


def make_problem(cfg: RunConfig, solver: FlowSolver | None = None):
    """Return ``(problem, q, h_star)``; ``h_star`` is None for file targets."""
    if solver is None:
        grid = make_grid(cfg)
        solver = make_solver(cfg, grid, make_medium(cfg, grid))
    grid = solver.grid
    q = make_source(cfg, grid)
    if cfg.target == "self_consistent":
        h_star = make_h_star(cfg, grid)
        return self_consistent_problem(solver, q, h_star, cfg.T, cfg.n_steps, cfg.alpha, cfg.gamma), q, h_star
    shape = (cfg.n_steps + 1, grid.ncells)
    c_d = np.broadcast_to(_load_field(cfg.c_d_file, grid, "c_d_file"), shape).copy()
    p_d = np.broadcast_to(_load_field(cfg.p_d_file, grid, "p_d_file"), shape).copy()
    spec = ObjectiveSpec(c_d, p_d, cfg.alpha, cfg.gamma)
    return ControlProblem(solver, q, cfg.T, cfg.n_steps, spec), q, None


def make_optimize_options(cfg: RunConfig) -> OptimizeOptions:
    return OptimizeOptions(max_iters=cfg.max_iters, tol_grad=cfg.tol_grad, c1=cfg.armijo_c1,
                           max_halvings=cfg.max_halvings)
