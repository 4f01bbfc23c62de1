"""Objective, reduced gradient and projected gradient descent for the source control.

A control is an array ``h`` of shape ``(N+1, ncells)`` with one zero-mean
field per time level.  Space-time integrals use cell sums times the cell
volume and the left-endpoint rule in time (levels ``0 .. N-1`` weighted by
``dt``, level ``N`` by zero).  The same rule defines the objective, the
pairing ``<a, b>`` and the norm, so the reduced gradient is the Riesz
representer of the derivative in exactly the pairing used for checks.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .adjoint import AdjointTrajectory, solve_adjoint
from .errors import InvalidArgumentError, MiscibleError, StagnationError
from .grid import Grid
from .solver import FlowSolver, StateTrajectory

ADMISSIBLE_TOL = 1e-12


def time_weights(n_steps: int, dt: float) -> np.ndarray:
    w = np.full(n_steps + 1, dt)
    w[-1] = 0.0
    return w


def pairing(grid: Grid, dt: float, a, b) -> float:
    """Discrete space-time ``L2`` inner product."""
    a, b = np.asarray(a), np.asarray(b)
    w = time_weights(a.shape[0] - 1, dt)
    return float(grid.volume * np.sum(w * np.sum(a * b, axis=1)))


def control_norm(grid: Grid, dt: float, a) -> float:
    return np.sqrt(max(pairing(grid, dt, a, a), 0.0))


def project_admissible(h) -> np.ndarray:
    """Orthogonal projection onto per-level zero-mean fields."""
    h = np.asarray(h, dtype=float)
    return h - h.mean(axis=-1, keepdims=True)


def admissibility_defect(h) -> float:
    """Largest ``|sum(h^n)| / ||h^n||_1`` over levels (0 for zero slices)."""
    h = np.asarray(h, dtype=float)
    l1 = np.sum(np.abs(h), axis=-1)
    s = np.abs(np.sum(h, axis=-1))
    return float(np.max(np.where(l1 > 0, s / np.where(l1 > 0, l1, 1.0), 0.0)))


@dataclass
class ObjectiveSpec:
    c_d: np.ndarray
    p_d: np.ndarray
    alpha: float = 0.0
    gamma: float = 1e-6

    def __post_init__(self):
        self.c_d = np.asarray(self.c_d, dtype=float)
        self.p_d = np.asarray(self.p_d, dtype=float)
        if self.c_d.shape != self.p_d.shape:
            raise InvalidArgumentError("c_d and p_d must have the same shape")
        if not self.alpha >= 0:
            raise InvalidArgumentError("alpha must be >= 0")
        if not self.gamma > 0:
            raise InvalidArgumentError("gamma must be > 0")


def evaluate_objective(states: StateTrajectory, h, spec: ObjectiveSpec) -> float:
    """``J = 1/2 |c - c_d|^2 + alpha/2 |p - p_d|^2 + gamma/2 |h|^2``."""
    h = np.asarray(h, dtype=float)
    if not (states.c.shape == h.shape == spec.c_d.shape):
        raise InvalidArgumentError(
            f"time meshes differ: state {states.c.shape}, control {h.shape}, target {spec.c_d.shape}")
    g, dt = states.grid, states.dt
    dc = states.c - spec.c_d
    J = 0.5 * pairing(g, dt, dc, dc) + 0.5 * spec.gamma * pairing(g, dt, h, h)
    if spec.alpha:
        dp = states.p - spec.p_d
        J += 0.5 * spec.alpha * pairing(g, dt, dp, dp)
    return J


def reduced_gradient(adjoints: AdjointTrajectory, h, gamma: float) -> np.ndarray:
    """``psi_c + psi_p + gamma h`` projected onto zero-mean variations."""
    h = np.asarray(h, dtype=float)
    if adjoints.psi_c.shape != h.shape:
        raise InvalidArgumentError("adjoint and control trajectories are not aligned")
    return project_admissible(adjoints.psi_c + adjoints.psi_p + gamma * h)


class ControlProblem:
    """Fixed grid, medium, background source ``q`` and objective."""

    def __init__(self, solver: FlowSolver, q, T: float, n_steps: int, spec: ObjectiveSpec):
        self.solver = solver
        self.grid = solver.grid
        self.q = np.asarray(q, dtype=float)
        self.T = float(T)
        self.n_steps = int(n_steps)
        self.dt = self.T / self.n_steps
        self.spec = spec
        shape = (self.n_steps + 1, self.grid.ncells)
        if spec.c_d.shape != shape:
            raise InvalidArgumentError(f"targets must have shape {shape}, got {spec.c_d.shape}")

    @property
    def control_shape(self):
        return (self.n_steps + 1, self.grid.ncells)

    def zero_control(self) -> np.ndarray:
        return np.zeros(self.control_shape)

    def forward(self, h) -> StateTrajectory:
        return self.solver.run_forward(self.q, h, self.T, self.n_steps)

    def objective(self, h):
        states = self.forward(h)
        return evaluate_objective(states, h, self.spec), states

    def adjoint(self, states: StateTrajectory) -> AdjointTrajectory:
        return solve_adjoint(self.solver, states, self.spec.c_d, self.spec.p_d, self.spec.alpha)

    def gradient(self, h, states: StateTrajectory | None = None):
        states = states or self.forward(h)
        adj = self.adjoint(states)
        return reduced_gradient(adj, h, self.spec.gamma), adj

    def pairing(self, a, b) -> float:
        return pairing(self.grid, self.dt, a, b)

    def norm(self, a) -> float:
        return control_norm(self.grid, self.dt, a)


@dataclass
class OptimizeOptions:
    max_iters: int = 200
    tol_grad: float = 1e-6
    c1: float = 1e-4
    shrink: float = 0.5
    max_halvings: int = 40
    initial_step: float | None = None

    def __post_init__(self):
        if self.max_iters < 0 or not self.tol_grad >= 0:
            raise InvalidArgumentError("max_iters and tol_grad must be non-negative")
        if not (0 < self.c1 < 1 and 0 < self.shrink < 1):
            raise InvalidArgumentError("need 0 < c1 < 1 and 0 < shrink < 1")


@dataclass
class IterationRecord:
    iter: int
    J: float
    grad_norm: float
    step: float
    ls_trials: int


@dataclass
class OptimizationReport:
    records: list = field(default_factory=list)
    optimality_residual: float = float("nan")
    iterations: int = 0
    wall_time: float = 0.0
    converged: bool = False

    CSV_HEADER = "iter,J,grad_norm,step,ls_trials"

    @property
    def J(self) -> np.ndarray:
        return np.array([r.J for r in self.records])

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        lines += [f"{r.iter},{r.J:.17g},{r.grad_norm:.17g},{r.step:.17g},{r.ls_trials}" for r in self.records]
        return "\n".join(lines) + "\n"


def optimize(problem: ControlProblem, h0=None, options: OptimizeOptions | None = None, callback=None):
    """Projected gradient descent with Armijo backtracking and Barzilai-Borwein steps.

    Returns
    -------
    h : ndarray
        Final control, admissible to rounding.
    report : OptimizationReport

    Raises
    ------
    StagnationError
        If no step passes the Armijo test within ``max_halvings`` halvings;
        the partial report and the last accepted control are attached.
    """
    opts = options or OptimizeOptions()
    t0 = time.perf_counter()
    h = problem.zero_control() if h0 is None else np.array(h0, dtype=float)
    if h.shape != problem.control_shape:
        raise InvalidArgumentError(f"h0 must have shape {problem.control_shape}")
    if admissibility_defect(h) > ADMISSIBLE_TOL:
        raise InvalidArgumentError("h0 is not admissible (nonzero mean in some level)")
    h = project_admissible(h)

    J, states = problem.objective(h)
    g, _ = problem.gradient(h, states)
    gnorm = problem.norm(g)
    report = OptimizationReport()
    report.records.append(IterationRecord(0, J, gnorm, 0.0, 0))
    h_prev = g_prev = None
    step = opts.initial_step
    for k in range(1, opts.max_iters + 1):
        if gnorm <= opts.tol_grad:
            report.converged = True
            break
        if h_prev is not None:
            dh, dg = h - h_prev, g - g_prev
            curv = problem.pairing(dh, dg)
            step = problem.pairing(dh, dh) / curv if curv > 0 else 2.0 * step
        elif step is None:
            step = 2.0 * J / gnorm**2 if J > 0 else 1.0 / gnorm
        trials = 0
        while True:
            trials += 1
            h_trial = project_admissible(h - step * g)
            try:
                J_trial, states_trial = problem.objective(h_trial)
            except MiscibleError:
                J_trial = np.inf
            if np.isfinite(J_trial) and J_trial <= J - opts.c1 * problem.pairing(g, h - h_trial) \
                    and J_trial < J:
                break
            if trials > opts.max_halvings:
                report.iterations = k - 1
                report.wall_time = time.perf_counter() - t0
                raise StagnationError(
                    f"line search failed after {opts.max_halvings} halvings at iteration {k}", report, h)
            step *= opts.shrink
        h_prev, g_prev = h, g
        h, J, states = h_trial, J_trial, states_trial
        g, _ = problem.gradient(h, states)
        gnorm = problem.norm(g)
        report.records.append(IterationRecord(k, J, gnorm, step, trials))
        if callback is not None:
            callback(k, h, report)
    else:
        report.converged = gnorm <= opts.tol_grad
    report.iterations = len(report.records) - 1
    report.optimality_residual = gnorm
    report.wall_time = time.perf_counter() - t0
    return h, report


def smooth_directions(grid: Grid, n_steps: int, count: int, seed: int, T: float = 1.0,
                      max_mode: int = 3, time_modes: int = 3) -> list:
    """Random unit-norm zero-mean controls built from low cosine modes.

    Each direction is a random combination of ``prod_i cos(k_i pi x_i / L_i)``
    (``0 <= k_i <= max_mode``, not all zero) times ``cos(l pi t / T)``
    (``0 <= l < time_modes``).  The same seed gives the same continuous
    fields on every grid, so checks can be repeated under refinement.
    """
    rng = np.random.default_rng(seed)
    x = grid.centers()
    t = np.arange(n_steps + 1) / n_steps
    modes = [k for k in np.ndindex(*(max_mode + 1,) * grid.dim) if any(k)]
    dt = T / n_steps
    out = []
    for _ in range(count):
        coef = rng.normal(size=(len(modes), time_modes))
        field_ = np.zeros((n_steps + 1, grid.ncells))
        for m, k in enumerate(modes):
            spatial = np.prod([np.cos(ki * np.pi * x[:, i] / grid.lengths[i]) for i, ki in enumerate(k)], axis=0)
            temporal = sum(coef[m, l] * np.cos(l * np.pi * t) for l in range(time_modes))
            field_ += temporal[:, None] * spatial[None, :]
        field_ = project_admissible(field_)
        out.append(field_ / control_norm(grid, dt, field_))
    return out


def dipole_source(grid: Grid, inject, extract, rate: float = 1.0) -> np.ndarray:
    """Point injection and extraction of total ``rate`` at two cells (given as index tuples)."""
    q = np.zeros(grid.ncells)
    arr = grid.to_array(q)
    arr[tuple(inject)[::-1]] += rate / grid.volume
    arr[tuple(extract)[::-1]] -= rate / grid.volume
    return q


def gaussian_dipole_source(grid: Grid, inject_at, extract_at, width: float, rate: float) -> np.ndarray:
    """Smooth injection/extraction pair; each lobe integrates to ``+-rate``."""
    x = grid.centers()
    lobes = []
    for centre in (inject_at, extract_at):
        bump = np.exp(-np.sum((x - np.asarray(centre)) ** 2, axis=1) / width**2)
        lobes.append(bump / (bump.sum() * grid.volume))
    return rate * (lobes[0] - lobes[1])


def gaussian_pair_control(grid: Grid, n_steps: int, centers, width: float, amplitude: float = 1.0,
                          T: float = 1.0) -> np.ndarray:
    """Smooth admissible control: a positive and a negative Gaussian bump, ramped in time."""
    x = grid.centers()
    a, b = (np.asarray(c, dtype=float) for c in centers)
    bump = np.exp(-np.sum((x - a) ** 2, axis=1) / width**2) - np.exp(-np.sum((x - b) ** 2, axis=1) / width**2)
    t = np.arange(n_steps + 1) * (T / n_steps)
    ramp = 0.5 * (1 - np.cos(np.pi * t / T))
    return project_admissible(amplitude * ramp[:, None] * bump[None, :])


def self_consistent_problem(solver: FlowSolver, q, h_star, T: float, n_steps: int,
                            alpha: float = 0.0, gamma: float = 1e-6) -> ControlProblem:
    """Targets are the states produced by ``h_star``, so ``h_star`` nearly attains ``J = 0``."""
    states = solver.run_forward(q, h_star, T, n_steps)
    spec = ObjectiveSpec(states.c.copy(), states.p.copy(), alpha, gamma)
    return ControlProblem(solver, q, T, n_steps, spec)


@dataclass
class GradientCheckResult:
    fd: np.ndarray
    adjoint: np.ndarray
    mismatch: np.ndarray

    def table(self) -> str:
        lines = ["direction,fd,adjoint,mismatch"]
        lines += [f"{i},{a:.17g},{b:.17g},{m:.17g}" for i, (a, b, m) in
                  enumerate(zip(self.fd, self.adjoint, self.mismatch))]
        return "\n".join(lines) + "\n"


def gradient_check(problem: ControlProblem, h, directions, eps: float = 1e-3) -> GradientCheckResult:
    """Compare ``<g, d>`` with central differences ``(J(h + eps d) - J(h - eps d)) / (2 eps)``."""
    h = np.asarray(h, dtype=float)
    g, _ = problem.gradient(h)
    fd, adj = [], []
    for d in directions:
        Jp, _ = problem.objective(h + eps * d)
        Jm, _ = problem.objective(h - eps * d)
        fd.append((Jp - Jm) / (2 * eps))
        adj.append(problem.pairing(g, d))
    fd, adj = np.array(fd), np.array(adj)
    with np.errstate(divide="ignore", invalid="ignore"):
        mismatch = np.abs(fd - adj) / np.abs(fd)
    return GradientCheckResult(fd, adj, mismatch)
