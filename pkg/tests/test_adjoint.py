import numpy as np
import pytest
from numpy.testing import assert_allclose

from miscible.adjoint import (adjoint_pressure_rhs, assemble_Ehat_flux, solve_adjoint,
                              solve_adjoint_concentration, solve_adjoint_pressure)
from miscible.errors import InvalidArgumentError
from miscible.grid import Grid
from miscible.optimize import dipole_source
from miscible.solver import FlowSolver, MediumFields, SolverOptions
from miscible.tensor import eval_velocity_jacobian, kron_apply_E


def make_case(n=8, N=6, d_t=0.01, d_l=0.1, mode="cell", seed=0):
    g = Grid((n, n), (1.0, 1.0))
    rng = np.random.default_rng(seed)
    m = MediumFields(np.full(g.ncells, 0.3), np.exp(0.3 * rng.standard_normal(g.ncells)), 0.02, d_t, d_l)
    s = FlowSolver(g, m, SolverOptions(pressure_method="direct", ehat_evaluation=mode))
    h = 0.3 * rng.standard_normal((N + 1, g.ncells))
    h -= h.mean(axis=1, keepdims=True)
    states = s.run_forward(dipole_source(g, (1, 1), (n - 2, n - 2)), h, 1.0, N)
    return g, s, states, rng


def test_zero_mismatch_gives_zero_adjoint():
    g, s, st, _ = make_case()
    adj = solve_adjoint(s, st, st.c, st.p, alpha=0.5)
    assert np.all(adj.psi_c == 0)
    assert_allclose(adj.psi_p, 0.0, atol=1e-14)


def test_terminal_and_initial_levels_and_mean():
    g, s, st, rng = make_case()
    c_d = rng.standard_normal(st.c.shape)
    adj = solve_adjoint(s, st, c_d, st.p + rng.standard_normal(st.p.shape), alpha=1.0)
    assert np.all(adj.psi_c[-1] == 0)
    assert np.all(adj.psi_c[0] == 0)
    assert np.all(np.abs(adj.psi_p.sum(axis=1)) <= 1e-12 * np.abs(adj.psi_p).sum(axis=1))


def test_adjoint_concentration_is_linear_in_mismatch():
    g, s, st, rng = make_case()
    r = rng.standard_normal(st.c.shape)
    psi1 = solve_adjoint_concentration(s, st, st.c - r)
    psi2 = solve_adjoint_concentration(s, st, st.c - 2 * r)
    assert_allclose(psi2, 2 * psi1, rtol=1e-12, atol=1e-14)


def test_time_reversal_oracle():
    # v = 0 and no mechanical dispersion: the adjoint is a backward heat march,
    # identical to a forward heat march on the reversed time grid
    g = Grid((8, 8), (1.0, 1.0))
    m = MediumFields.uniform(g, phi=0.4, d_m=0.05)
    s = FlowSolver(g, m)
    N = 7
    st = s.run_forward(np.zeros(g.ncells), np.zeros((N + 1, g.ncells)), 1.0, N)
    rng = np.random.default_rng(1)
    c_d = rng.standard_normal(st.c.shape)
    psi = solve_adjoint_concentration(s, st, c_d)
    vel, dt = st.velocities[0], st.dt
    u = np.zeros(g.ncells)
    for k in range(1, N):
        u = s.advance_concentration(u, vel, -c_d[N - k], dt)
        assert np.abs(u - psi[N - k]).max() <= 1e-10


def test_discrete_duality_pairing():
    # for a concentration-only source perturbation df with response dc:
    # sum_n (c^n - c_d^n) . dc^n = sum_n psi^n . df^n over levels 1..N-1
    g, s, st, rng = make_case(d_t=0.02, d_l=0.2)
    c_d = st.c + rng.standard_normal(st.c.shape)
    psi = solve_adjoint_concentration(s, st, c_d)
    df = rng.standard_normal(st.c.shape)
    dc = np.zeros_like(df)
    for n in range(1, st.n_steps + 1):
        dc[n] = s.advance_concentration(dc[n - 1], st.velocities[n], df[n], st.dt)
    lhs = np.sum((st.c - c_d)[1:-1] * dc[1:-1])
    rhs = np.sum(psi[1:-1] * df[1:-1])
    assert_allclose(lhs, rhs, rtol=1e-10)


def test_adjoint_rejects_misaligned_targets():
    g, s, st, _ = make_case()
    with pytest.raises(InvalidArgumentError):
        solve_adjoint_concentration(s, st, st.c[:-1])


def test_ehat_flux_zero_for_constant_c():
    g, s, st, rng = make_case()
    F = assemble_Ehat_flux(g, s.medium, st.velocities[1].cells, np.full(g.ncells, 2.0),
                           rng.standard_normal(g.ncells))
    assert np.all(F == 0)


def test_ehat_flux_isotropic_uniform_velocity():
    # d_l = d_t: dD_sk/dv_r = d_t delta_sk v_r/|v|, so F = K d_t (grad c . grad psi) v/|v|
    g = Grid((8, 8), (1.0, 1.0))
    m = MediumFields.uniform(g, phi=0.3, K=2.0, d_m=0.1, d_t=0.05, d_l=0.05)
    x = g.centers()
    v = np.tile([0.6, -0.8], (g.ncells, 1))
    c = 1.5 * x[:, 0] + 0.5 * x[:, 1]
    psi = -x[:, 0] + 2.0 * x[:, 1]
    F = assemble_Ehat_flux(g, m, v, c, psi)
    gc = g.ops.tangential_cell_gradient(c)
    gpsi = g.ops.tangential_cell_gradient(psi)
    expected = 2.0 * 0.05 * np.sum(gc * gpsi, axis=1)[:, None] * v
    assert_allclose(F, expected, atol=1e-14)
    interior = np.all((x > 1 / 8) & (x < 7 / 8), axis=1)
    assert_allclose(F[interior], np.tile(2.0 * 0.05 * (-1.5 + 1.0) * np.array([0.6, -0.8]),
                                         (interior.sum(), 1)), rtol=1e-12)


def test_ehat_flux_interior_duality():
    g, s, st, rng = make_case(d_t=0.02, d_l=0.3)
    v = st.velocities[2].cells
    c, psi, p = rng.standard_normal((3, g.ncells))
    F = assemble_Ehat_flux(g, s.medium, v, c, psi)
    gp = g.ops.tangential_cell_gradient(p)
    gc = g.ops.tangential_cell_gradient(c)
    gpsi = g.ops.tangential_cell_gradient(psi)
    J = eval_velocity_jacobian(s.medium.params(s.medium.phi), v)
    lhs = np.sum(gp * F)
    rhs = np.sum(s.medium.K[:, None] * kron_apply_E(J, gp, gc) * gpsi)
    assert_allclose(lhs, rhs, rtol=1e-12)


def test_ehat_flux_normal_component_vanishes_under_refinement():
    # smooth fields with no-flux walls: F.n in the wall cells shrinks with h
    worst = []
    for n in (16, 32, 64):
        g = Grid((n, n), (1.0, 1.0))
        x = g.centers()
        m = MediumFields.uniform(g, phi=0.3, d_m=0.01, d_t=0.02, d_l=0.2)
        # velocity of a stream function: tangential on the walls
        v = np.stack([np.sin(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1]),
                      -np.cos(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])], axis=1) + 0.3
        v[:, 0] *= np.sin(np.pi * x[:, 0])
        v[:, 1] *= np.sin(np.pi * x[:, 1])
        c = np.cos(np.pi * x[:, 0]) * np.cos(2 * np.pi * x[:, 1])
        psi = np.cos(2 * np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1])
        F = assemble_Ehat_flux(g, m, v, c, psi)
        worst.append(max(np.abs(F[g.ops.wall_cells(a), a]).max() for a in range(2)))
    assert worst[0] > worst[1] > worst[2]


def test_adjoint_pressure_trivial_cases():
    g, s, st, _ = make_case()
    zero = np.zeros(g.ncells)
    vel = st.velocities[3]
    assert np.all(solve_adjoint_pressure(s, st.p[3], vel, zero, zero, st.p[3], 0.0) == 0)
    assert np.all(solve_adjoint_pressure(s, st.p[3], vel, zero, zero, st.p[3], 2.0) == 0)


@pytest.mark.parametrize("mode", ["cell", "face"])
def test_adjoint_pressure_residual(mode):
    g, s, st, rng = make_case(mode=mode)
    psi_c = rng.standard_normal(g.ncells)
    p_d = rng.standard_normal(g.ncells)
    n = 3
    rhs = adjoint_pressure_rhs(s, st.p[n], st.velocities[n], st.c[n], psi_c, p_d, 0.7)
    assert abs(rhs.sum()) <= 1e-12 * np.abs(rhs).sum()
    psi_p = solve_adjoint_pressure(s, st.p[n], st.velocities[n], st.c[n], psi_c, p_d, 0.7)
    res = s.pressure_matrix @ psi_p - rhs
    assert np.linalg.norm(res) <= 1e-10 * np.linalg.norm(rhs)
    assert abs(psi_p.sum()) <= 1e-12 * np.abs(psi_p).sum()


def test_modes_agree_without_mechanical_dispersion():
    g, s, st, rng = make_case(d_t=0.0, d_l=0.0)
    s_face = FlowSolver(g, s.medium, SolverOptions(pressure_method="direct", ehat_evaluation="face"))
    psi_c = rng.standard_normal(g.ncells)
    args = (st.p[2], st.velocities[2], st.c[2], psi_c, st.p[2], 0.0)
    assert_allclose(adjoint_pressure_rhs(s, *args), adjoint_pressure_rhs(s_face, *args), atol=1e-12)


def test_negative_alpha_rejected():
    g, s, st, _ = make_case()
    zero = np.zeros(g.ncells)
    with pytest.raises(InvalidArgumentError):
        solve_adjoint_pressure(s, st.p[1], st.velocities[1], zero, zero, zero, -1.0)
