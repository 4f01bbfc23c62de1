"""Backward-in-time adjoint solves for the concentration and pressure multipliers.

The concentration multiplier solves

    -phi dpsi_c/dt - div(D(v) grad psi_c) - v . grad psi_c = c - c_d,   psi_c(T) = 0,

with no-flux boundaries, and at each time level the pressure multiplier solves

    -div(K grad psi_p) = alpha (p - p_d) - div(K (Ehat (x) grad c) grad psi_c)
                         + div(c K grad psi_c),        mean(psi_p) = 0.

Time levels follow the forward march: the transport step into level ``n``
uses the velocity of level ``n``, and the objective weights levels
``0 .. N-1`` (left-endpoint rule).  Hence ``psi_c^N = 0`` and, because the
control at level 0 never enters a transport step, ``psi_c^0 = 0``.

The transport matrix of the adjoint is the transpose of the forward one,
which turns upwinding of ``div(c v)`` into upwinding of ``-v . grad psi``
against the flow.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .grid import Grid
from .solver import FlowSolver, MediumFields, StateTrajectory, Velocity, check_compatible
from .tensor import DEFAULT_EPS_REG, eval_velocity_jacobian, kron_apply_Ehat


@dataclass
class AdjointTrajectory:
    psi_c: np.ndarray  # (N+1, ncells)
    psi_p: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.psi_c.shape[0] - 1


def _check_target(states: StateTrajectory, target, name):
    target = np.asarray(target, dtype=float)
    if target.shape != states.c.shape:
        raise InvalidArgumentError(f"{name} has shape {target.shape}, expected {states.c.shape}")
    return target


def solve_adjoint_concentration(solver: FlowSolver, states: StateTrajectory, c_d) -> np.ndarray:
    """Backward-Euler march of the concentration adjoint from ``psi_c^N = 0``."""
    c_d = _check_target(states, c_d, "c_d")
    N, dt = states.n_steps, states.dt
    phi = solver.medium.phi
    psi = np.zeros_like(states.c)
    op, op_key = None, None
    for n in range(N - 1, 0, -1):
        key = states.p[n].tobytes()
        if key != op_key:
            op, op_key = solver.transport_operator(states.velocities[n], dt), key
        psi[n] = op.solve_transpose(phi / dt * psi[n + 1] + (states.c[n] - c_d[n]))
    return psi


def assemble_Ehat_flux(grid: Grid, medium: MediumFields, v, c, psi_c, eps_reg: float = DEFAULT_EPS_REG):
    """Cell flux ``K (Ehat (x) grad c) grad psi_c``, shape ``(ncells, dim)``.

    Gradients are centered; in wall cells their normal component is zeroed,
    matching the no-flux conditions on ``c`` and ``psi_c`` under which the
    normal component of this flux vanishes on the boundary.
    """
    ops = grid.ops
    grad_c = ops.tangential_cell_gradient(c)
    grad_psi = ops.tangential_cell_gradient(psi_c)
    J = eval_velocity_jacobian(medium.params(medium.phi), v, eps_reg)
    return medium.K[:, None] * kron_apply_Ehat(J, grad_c, grad_psi)


def _upwind_face_values(grid: Grid, vel: Velocity, c):
    ops = grid.ops
    return [np.where(F > 0, lo @ c, hi @ c) for F, lo, hi in zip(vel.faces, ops.lo, ops.hi)]


def velocity_sensitivity_face(solver: FlowSolver, vel: Velocity, c, psi_c) -> np.ndarray:
    """Cell vector ``W`` with ``sum(W . dv)`` the first variation of the dispersion form.

    Cross entries ``a != b`` use the cell Jacobian and cell gradients; the
    diagonal entries ``a = a`` use the Jacobian at the faces where the
    transport scheme evaluates ``D_aa``, times the face-normal differences.
    """
    g, m = solver.grid, solver.medium
    ops = g.ops
    grad_c = ops.cell_gradient(c)
    grad_psi = ops.cell_gradient(psi_c)
    J = eval_velocity_jacobian(m.params(m.phi), vel.cells, solver.options.eps_reg)
    W = kron_apply_Ehat(J, grad_c, grad_psi)
    W -= np.einsum("naar,na,na->nr", J, grad_c, grad_psi)
    for a, (D, A) in enumerate(zip(ops.diff, ops.avg)):
        J_f = eval_velocity_jacobian(m.params(A @ m.phi), A @ vel.cells, solver.options.eps_reg)
        W += A.T @ (J_f[:, a, a, :] * ((D @ c) * (D @ psi_c))[:, None])
    return W


def adjoint_pressure_rhs(solver: FlowSolver, p, vel: Velocity, c, psi_c, p_d, alpha: float):
    """Right-hand side of the pressure adjoint; flux terms are exactly mean-free."""
    g = solver.grid
    ops = g.ops
    misfit = alpha * (np.asarray(p) - np.asarray(p_d))
    rhs = misfit - misfit.mean()
    if np.any(psi_c):
        if solver.options.ehat_evaluation == "cell":
            F = assemble_Ehat_flux(g, solver.medium, vel.cells, c, psi_c, solver.options.eps_reg)
            rhs = rhs - ops.divergence_of_cell_vector(F)
        else:
            W = velocity_sensitivity_face(solver, vel, c, psi_c)
            rhs = rhs - ops.divergence_of_face_flux(
                [Kf * (A @ W[:, a]) for a, (A, Kf) in enumerate(zip(ops.avg, solver.K_faces))])
        c_face = _upwind_face_values(g, vel, c)
        rhs = rhs + ops.divergence_of_face_flux(
            [cf * Kf * (D @ psi_c) for cf, Kf, D in zip(c_face, solver.K_faces, ops.diff)])
    return rhs


def solve_adjoint_pressure(solver: FlowSolver, p, vel: Velocity, c, psi_c, p_d, alpha: float):
    """Zero-mean ``psi_p`` at one time level."""
    if alpha < 0:
        raise InvalidArgumentError("alpha must be >= 0")
    rhs = adjoint_pressure_rhs(solver, p, vel, c, psi_c, p_d, alpha)
    check_compatible(solver.grid, rhs, "adjoint pressure right-hand side")
    return solver.solve_pressure(rhs)


def solve_adjoint(solver: FlowSolver, states: StateTrajectory, c_d, p_d, alpha: float) -> AdjointTrajectory:
    p_d = _check_target(states, p_d, "p_d")
    psi_c = solve_adjoint_concentration(solver, states, c_d)
    psi_p = np.empty_like(psi_c)
    for n in range(states.n_steps + 1):
        psi_p[n] = solve_adjoint_pressure(solver, states.p[n], states.velocities[n], states.c[n],
                                          psi_c[n], p_d[n], alpha)
    return AdjointTrajectory(psi_c, psi_p)
