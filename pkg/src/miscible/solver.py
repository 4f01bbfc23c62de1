"""Cell-centered finite-volume solver for the pressure-concentration system.

Per time level the pressure solves ``-div(K grad p) = q + h`` with no-flux
boundaries and zero mean, the Darcy velocity is ``v = -K grad p``, and the
concentration takes one backward-Euler step of

    phi dc/dt - div(D(v) grad c) + div(c v) = q + h,    c(0) = 0.

Discretization, per axis ``a`` and interior face ``f``:

* pressure: two-point flux with harmonic-mean ``K_f``; face flux
  ``F_f = -K_f (p_hi - p_lo)/h``; boundary fluxes are zero;
* cell velocity: mean of the two opposing face fluxes;
* normal dispersion: ``D_aa`` evaluated at the face from the averaged
  neighbouring cell velocities, two-point stencil, implicit;
* cross dispersion ``D_ab`` (a != b): cell-centered products with the cell
  gradient, averaged back to faces.  Either implicit (default, the converged
  limit of a deferred correction) or lagged to the previous time level;
* advection: first-order upwind on the face fluxes.

All face terms telescope, so ``sum(phi * c) * vol`` changes only through
the source.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CompatibilityError, InvalidArgumentError, IterationLimitError
from .grid import Grid, harmonic_face_mean
from .tensor import DEFAULT_EPS_REG, DispersionParams, eval_dispersion_tensor

COMPAT_TOL = 1e-10


@dataclass
class MediumFields:
    phi: np.ndarray
    K: np.ndarray
    d_m: float
    d_t: float
    d_l: float

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        self.K = np.asarray(self.K, dtype=float)
        if self.phi.shape != self.K.shape or self.phi.ndim != 1:
            raise InvalidArgumentError("phi and K must be flat per-cell arrays of equal length")
        if not (np.all(np.isfinite(self.phi)) and np.all(self.phi > 0)):
            raise InvalidArgumentError("porosity must be finite and positive in every cell")
        if not (np.all(np.isfinite(self.K)) and np.all(self.K > 0)):
            raise InvalidArgumentError("permeability must be finite and positive in every cell")
        # reuse the scalar checks of the tensor parameters
        DispersionParams(1.0, self.d_m, self.d_t, self.d_l)

    @classmethod
    def uniform(cls, grid: Grid, phi=1.0, K=1.0, d_m=1.0, d_t=0.0, d_l=0.0) -> "MediumFields":
        n = grid.ncells
        return cls(np.full(n, float(phi)), np.full(n, float(K)), d_m, d_t, d_l)

    def check_grid(self, grid: Grid):
        if self.phi.size != grid.ncells:
            raise InvalidArgumentError(f"medium has {self.phi.size} cells, grid has {grid.ncells}")

    def params(self, phi) -> DispersionParams:
        return DispersionParams(phi, self.d_m, self.d_t, self.d_l)


@dataclass
class SolverOptions:
    pressure_method: str = "cg"
    pressure_tol: float = 1e-12
    pressure_maxiter: int | None = None
    cross_terms: str = "implicit"
    eps_reg: float = DEFAULT_EPS_REG
    # "cell": velocity derivatives of D at cell centers (discretized continuous adjoint);
    # "face": diagonal derivatives at the faces used by the transport stencil,
    # which makes the reduced gradient exact for the discrete objective
    ehat_evaluation: str = "cell"

    def __post_init__(self):
        if self.pressure_method not in ("cg", "direct"):
            raise InvalidArgumentError("pressure_method must be 'cg' or 'direct'")
        if self.cross_terms not in ("implicit", "lagged"):
            raise InvalidArgumentError("cross_terms must be 'implicit' or 'lagged'")
        if self.ehat_evaluation not in ("face", "cell"):
            raise InvalidArgumentError("ehat_evaluation must be 'face' or 'cell'")
        if not self.pressure_tol > 0:
            raise InvalidArgumentError("pressure_tol must be positive")


@dataclass
class Velocity:
    faces: list  # interior face fluxes per axis
    cells: np.ndarray  # (ncells, dim)


@dataclass
class StateTrajectory:
    grid: Grid
    dt: float
    sources: np.ndarray  # q + h^n, (N+1, ncells)
    p: np.ndarray
    c: np.ndarray
    velocities: list

    @property
    def n_steps(self) -> int:
        return self.c.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


def check_compatible(grid: Grid, rhs, name="right-hand side") -> np.ndarray:
    """Verify ``sum(rhs) * vol`` vanishes to ``COMPAT_TOL * ||rhs||_1`` and remove the residue."""
    rhs = np.asarray(rhs, dtype=float)
    total = abs(np.sum(rhs))
    if total > COMPAT_TOL * max(np.sum(np.abs(rhs)), np.finfo(float).tiny):
        raise CompatibilityError(
            f"{name} must have zero mean for a no-flux problem (mean = {np.mean(rhs):.3e})")
    return rhs - np.mean(rhs)


def _pcg(A, b, diag, tol, maxiter, x0=None):
    """Jacobi-preconditioned CG on the zero-mean subspace."""
    def project(y):
        return y - y.mean()

    x = np.zeros_like(b) if x0 is None else project(np.asarray(x0, dtype=float))
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    r = project(b - A @ x)
    z = project(r / diag)
    d = z.copy()
    rz = r @ z
    for it in range(maxiter):
        if np.linalg.norm(r) <= tol * bnorm:
            return x, it
        Ad = A @ d
        step = rz / (d @ Ad)
        x += step * d
        r = project(r - step * Ad)
        z = project(r / diag)
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
    if np.linalg.norm(r) <= tol * bnorm:
        return x, maxiter
    raise IterationLimitError(f"pressure CG did not reach {tol:g} in {maxiter} iterations")


@dataclass
class TransportOperator:
    """Backward-Euler transport matrix for one velocity field."""

    implicit: sp.csc_matrix
    cross: sp.csr_matrix | None
    upwind: list  # per axis, boolean mask: face takes its value from the low cell
    _lu: dict = field(default_factory=dict, repr=False)

    @property
    def full(self) -> sp.csc_matrix:
        return self.implicit if self.cross is None else (self.implicit + self.cross).tocsc()

    def _factor(self, lagged: bool):
        if lagged not in self._lu:
            self._lu[lagged] = spla.splu(self.implicit if lagged else self.full)
        return self._lu[lagged]

    def solve(self, b, lagged=False):
        return self._factor(lagged).solve(b)

    def solve_transpose(self, b):
        return self._factor(False).solve(b, trans="T")


class FlowSolver:
    """Discrete operators for one grid, medium and option set."""

    def __init__(self, grid: Grid, medium: MediumFields, options: SolverOptions | None = None):
        medium.check_grid(grid)
        self.grid = grid
        self.medium = medium
        self.options = options or SolverOptions()
        ops = grid.ops
        self.K_faces = harmonic_face_mean(grid, medium.K)
        self.pressure_matrix = sum(
            D.T @ sp.diags(Kf) @ D for D, Kf in zip(ops.diff, self.K_faces)).tocsr()
        self._diag = self.pressure_matrix.diagonal()
        self._pressure_lu = None
        self._anisotropic = medium.d_l != medium.d_t

    # pressure ----------------------------------------------------------
    def solve_pressure(self, rhs, x0=None) -> np.ndarray:
        rhs = check_compatible(self.grid, rhs)
        if self.options.pressure_method == "direct":
            if self._pressure_lu is None:
                # pin the first cell; the dropped equation is implied by compatibility
                self._pressure_lu = spla.splu(self.pressure_matrix[1:, 1:].tocsc())
            p = np.concatenate([[0.0], self._pressure_lu.solve(rhs[1:])])
        else:
            maxiter = self.options.pressure_maxiter or 50 * self.grid.ncells
            p, _ = _pcg(self.pressure_matrix, rhs, self._diag, self.options.pressure_tol, maxiter, x0)
        return p - p.mean()

    def darcy_velocity(self, p) -> Velocity:
        ops = self.grid.ops
        faces = [-Kf * (D @ p) for D, Kf in zip(ops.diff, self.K_faces)]
        cells = np.stack([A.T @ F for A, F in zip(ops.avg, faces)], axis=-1)
        return Velocity(faces, cells)

    # transport ---------------------------------------------------------
    def transport_operator(self, vel: Velocity, dt: float) -> TransportOperator:
        if not dt > 0:
            raise InvalidArgumentError("dt must be positive")
        g, m = self.grid, self.medium
        ops = g.ops
        terms = [sp.diags(m.phi / dt)]
        upwind = []
        for a, (D, A, lo, hi, F) in enumerate(zip(ops.diff, ops.avg, ops.lo, ops.hi, vel.faces)):
            v_face = A @ vel.cells
            phi_face = A @ m.phi
            D_face = eval_dispersion_tensor(m.params(phi_face), v_face)[:, a, a]
            terms.append(D.T @ sp.diags(D_face) @ D)
            from_lo = F > 0
            upwind.append(from_lo)
            U = sp.diags(from_lo.astype(float)) @ lo + sp.diags((~from_lo).astype(float)) @ hi
            terms.append(-(D.T @ sp.diags(F) @ U))
        cross = None
        if self._anisotropic and g.dim > 1:
            D_cell = eval_dispersion_tensor(m.params(m.phi), vel.cells)
            blocks = [ops.grad[a].T @ sp.diags(D_cell[:, a, b]) @ ops.grad[b]
                      for a in range(g.dim) for b in range(g.dim) if a != b]
            cross = sum(blocks).tocsr()
        return TransportOperator(sum(terms).tocsc(), cross, upwind)

    def advance_concentration(self, c_old, vel: Velocity, rhs, dt, op: TransportOperator | None = None):
        op = op or self.transport_operator(vel, dt)
        b = self.medium.phi / dt * c_old + rhs
        lagged = self.options.cross_terms == "lagged" and op.cross is not None
        if lagged:
            b = b - op.cross @ c_old
        c = op.solve(b, lagged=lagged)
        if not np.all(np.isfinite(c)):
            raise IterationLimitError("transport solve produced non-finite values")
        return c

    def run_forward(self, q, h, T: float, n_steps: int) -> StateTrajectory:
        """March ``n_steps`` backward-Euler steps; ``h`` has one slice per time level."""
        g = self.grid
        if n_steps < 1 or not T > 0:
            raise InvalidArgumentError("need T > 0 and at least one step")
        h = np.asarray(h, dtype=float)
        if h.shape != (n_steps + 1, g.ncells):
            raise InvalidArgumentError(f"control must have shape {(n_steps + 1, g.ncells)}, got {h.shape}")
        q = np.broadcast_to(np.asarray(q, dtype=float), h.shape)
        dt = T / n_steps
        sources = q + h
        p = np.empty_like(sources)
        c = np.zeros_like(sources)
        velocities = []
        last_key, last_p = None, None
        for n in range(n_steps + 1):
            key = sources[n].tobytes()
            if key != last_key:
                last_p = self.solve_pressure(sources[n])
                last_key = key
            p[n] = last_p
            velocities.append(self.darcy_velocity(p[n]))
        op, op_key = None, None
        for n in range(1, n_steps + 1):
            key = p[n].tobytes()
            if key != op_key:
                op, op_key = self.transport_operator(velocities[n], dt), key
            c[n] = self.advance_concentration(c[n - 1], velocities[n], sources[n], dt, op)
        return StateTrajectory(g, dt, sources, p, c, velocities)


def solve_pressure(grid: Grid, medium: MediumFields, rhs, options: SolverOptions | None = None, x0=None):
    """Zero-mean solution of ``-div(K grad p) = rhs`` with no-flux boundaries."""
    return FlowSolver(grid, medium, options).solve_pressure(rhs, x0)


def compute_darcy_velocity(grid: Grid, medium: MediumFields, p) -> Velocity:
    return FlowSolver(grid, medium).darcy_velocity(p)


def advance_concentration(grid: Grid, medium: MediumFields, c_old, vel: Velocity, rhs, dt,
                          options: SolverOptions | None = None):
    return FlowSolver(grid, medium, options).advance_concentration(c_old, vel, rhs, dt)


def run_forward(grid: Grid, medium: MediumFields, q, h, T: float, n_steps: int,
                options: SolverOptions | None = None) -> StateTrajectory:
    return FlowSolver(grid, medium, options).run_forward(q, h, T, n_steps)
