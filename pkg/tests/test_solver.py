import numpy as np
import pytest
import scipy.sparse as sp
from numpy.testing import assert_allclose

from miscible.errors import CompatibilityError, InvalidArgumentError
from miscible.grid import Grid
from miscible.optimize import dipole_source
from miscible.solver import (FlowSolver, MediumFields, SolverOptions, Velocity,
                             compute_darcy_velocity, run_forward, solve_pressure)


def unit_grid(n, dim=2):
    return Grid((n,) * dim, (1.0,) * dim)


def cosine_field(g):
    x = g.centers()
    return np.prod(np.cos(np.pi * x), axis=1)


def pressure_error(n, method="cg"):
    g = unit_grid(n)
    m = MediumFields.uniform(g)
    exact = cosine_field(g)
    p = solve_pressure(g, m, 2 * np.pi**2 * exact, SolverOptions(pressure_method=method))
    return np.sqrt(g.integrate((p - exact) ** 2))


def heat_error(n, n_steps, d_m=0.1, phi=0.5, T=0.2):
    """Pure diffusion against c = exp(-t) cos(pi x) cos(pi y); no-flux walls, zero velocity."""
    g = unit_grid(n)
    m = MediumFields.uniform(g, phi=phi, d_m=d_m)
    s = FlowSolver(g, m)
    shape = cosine_field(g)
    dt = T / n_steps
    vel = Velocity([np.zeros(D.shape[0]) for D in g.ops.diff], np.zeros((g.ncells, 2)))
    op = s.transport_operator(vel, dt)
    c = shape.copy()
    for k in range(1, n_steps + 1):
        t = k * dt
        f = phi * (-1 + 2 * np.pi**2 * d_m) * np.exp(-t) * shape
        c = s.advance_concentration(c, vel, f, dt, op)
    return np.sqrt(g.integrate((c - np.exp(-T) * shape) ** 2))


# pressure -------------------------------------------------------------------

def test_pressure_manufactured_order():
    errs = [pressure_error(n) for n in (16, 32, 64)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(orders - 2.0) <= 0.4), orders


def test_pressure_methods_agree():
    g = unit_grid(12)
    rng = np.random.default_rng(0)
    m = MediumFields(np.full(g.ncells, 0.3), np.exp(rng.standard_normal(g.ncells)), 1.0, 0.0, 0.0)
    rhs = rng.standard_normal(g.ncells)
    rhs -= rhs.mean()
    p_cg = solve_pressure(g, m, rhs, SolverOptions(pressure_method="cg"))
    p_lu = solve_pressure(g, m, rhs, SolverOptions(pressure_method="direct"))
    assert_allclose(p_cg, p_lu, atol=1e-9)
    assert abs(p_lu.mean()) < 1e-14
    # the discrete equation holds exactly
    s = FlowSolver(g, m)
    assert_allclose(s.pressure_matrix @ p_lu, rhs, atol=1e-10)


def test_pressure_zero_rhs_and_initial_guess():
    g = unit_grid(8)
    s = FlowSolver(g, MediumFields.uniform(g))
    assert np.all(s.solve_pressure(np.zeros(g.ncells)) == 0)
    rhs = dipole_source(g, (1, 1), (6, 6))
    rng = np.random.default_rng(1)
    assert_allclose(s.solve_pressure(rhs), s.solve_pressure(rhs, x0=rng.standard_normal(g.ncells)), atol=1e-10)


def test_pressure_incompatible_rhs_rejected():
    g = unit_grid(8)
    with pytest.raises(CompatibilityError):
        solve_pressure(g, MediumFields.uniform(g), np.full(g.ncells, 1e-3))


def test_dipole_point_symmetry():
    n = 10
    g = unit_grid(n)
    p = solve_pressure(g, MediumFields.uniform(g), dipole_source(g, (1, 2), (n - 2, n - 3)))
    # reflecting through the centre swaps injector and producer
    assert_allclose(g.to_array(p)[::-1, ::-1], -g.to_array(p), atol=1e-10)


def test_pressure_3d():
    g = Grid((6, 5, 4), (1.0, 1.0, 1.0))
    s = FlowSolver(g, MediumFields.uniform(g), SolverOptions(pressure_method="direct"))
    rhs = dipole_source(g, (0, 0, 0), (5, 4, 3))
    p = s.solve_pressure(rhs)
    assert_allclose(s.pressure_matrix @ p, rhs, atol=1e-10)


# velocity -------------------------------------------------------------------

def test_darcy_velocity_of_constant_pressure_is_zero():
    g = unit_grid(6)
    vel = compute_darcy_velocity(g, MediumFields.uniform(g), np.full(g.ncells, 4.2))
    assert all(np.all(F == 0) for F in vel.faces)
    assert np.all(vel.cells == 0)


def test_darcy_velocity_balances_source():
    g = unit_grid(9)
    rng = np.random.default_rng(2)
    m = MediumFields(np.full(g.ncells, 0.2), np.exp(rng.standard_normal(g.ncells)), 1.0, 0.0, 0.0)
    s = FlowSolver(g, m, SolverOptions(pressure_method="direct"))
    rhs = dipole_source(g, (2, 2), (6, 7), 3.0)
    vel = s.darcy_velocity(s.solve_pressure(rhs))
    assert_allclose(g.ops.divergence_of_face_flux(vel.faces), rhs, atol=1e-9)


def test_linear_pressure_gives_uniform_interior_velocity():
    g = unit_grid(8)
    x = g.centers()
    vel = compute_darcy_velocity(g, MediumFields.uniform(g, K=2.0), 3.0 * x[:, 0])
    assert_allclose(vel.faces[0], -6.0)
    assert_allclose(vel.faces[1], 0.0)
    interior = (x[:, 0] > 0.2) & (x[:, 0] < 0.8)
    assert_allclose(vel.cells[interior, 0], -6.0)
    # next to the wall the zero boundary flux enters the average
    assert_allclose(vel.cells[x[:, 0] < 0.1, 0], -3.0)


# transport ------------------------------------------------------------------

def test_heat_manufactured_convergence():
    e1 = heat_error(16, 10)
    e2 = heat_error(32, 40)
    assert np.log2(e1 / e2) == pytest.approx(2.0, abs=0.4)


def dipole_state(n=10, d_t=0.01, d_l=0.1, options=None):
    g = unit_grid(n)
    m = MediumFields.uniform(g, phi=0.3, d_m=0.02, d_t=d_t, d_l=d_l)
    s = FlowSolver(g, m, options)
    vel = s.darcy_velocity(s.solve_pressure(dipole_source(g, (1, 1), (n - 2, n - 2))))
    return g, s, vel


def test_transport_operator_conserves_mass():
    g, s, vel = dipole_state()
    A = s.transport_operator(vel, 0.1).full
    phi_dt = sp.diags(s.medium.phi / 0.1)
    # column sums of the flux part vanish: sum_i (A c)_i = sum_i phi c_i / dt
    assert_allclose(np.asarray((A - phi_dt).sum(axis=0)).ravel(), 0.0, atol=1e-10)


def test_isotropic_transport_is_m_matrix():
    g, s, vel = dipole_state(d_t=0.05, d_l=0.05)
    op = s.transport_operator(vel, 0.05)
    assert op.cross is None
    A = op.full.toarray()
    off = A - np.diag(np.diag(A))
    assert np.all(off <= 1e-14)
    assert np.all(np.diag(A) > 0)


def test_maximum_principle_isotropic_divergence_free():
    # a rotating face flux built from a stream function is discretely divergence free
    g = unit_grid(12)
    m = MediumFields.uniform(g, phi=0.4, d_m=0.01, d_t=0.02, d_l=0.02)
    s = FlowSolver(g, m)
    nx = ny = 12
    h = 1.0 / nx
    xs = np.arange(nx + 1) * h
    psi = np.sin(np.pi * xs)[None, :] * np.sin(np.pi * xs)[:, None]  # [j, i] at nodes
    Fx = (psi[1:, 1:-1] - psi[:-1, 1:-1]) / h   # faces between cells in x: [j, i]
    Fy = -(psi[1:-1, 1:] - psi[1:-1, :-1]) / h
    faces = [Fx.ravel(), Fy.ravel()]
    assert_allclose(g.ops.divergence_of_face_flux(faces), 0.0, atol=1e-10)
    cells = np.stack([A.T @ F for A, F in zip(g.ops.avg, faces)], axis=-1)
    vel = Velocity(faces, cells)
    rng = np.random.default_rng(4)
    c = rng.uniform(0.2, 0.9, g.ncells)
    op = s.transport_operator(vel, 0.05)
    for _ in range(10):
        c = s.advance_concentration(c, vel, np.zeros(g.ncells), 0.05, op)
        assert c.min() >= 0.2 - 1e-12 and c.max() <= 0.9 + 1e-12


def test_transpose_solve():
    g, s, vel = dipole_state()
    op = s.transport_operator(vel, 0.1)
    b = np.random.default_rng(5).standard_normal(g.ncells)
    assert_allclose(op.full.T @ op.solve_transpose(b), b, atol=1e-10)
    assert_allclose(op.full @ op.solve(b), b, atol=1e-10)


def test_lagged_cross_terms_converge_to_implicit():
    diffs = []
    for n_steps in (10, 20, 40):
        runs = []
        for mode in ("implicit", "lagged"):
            g = unit_grid(8)
            m = MediumFields.uniform(g, phi=0.3, d_m=0.01, d_t=0.01, d_l=0.2)
            q = dipole_source(g, (1, 1), (6, 6))
            st = run_forward(g, m, q, np.zeros((n_steps + 1, g.ncells)), 1.0, n_steps,
                             SolverOptions(cross_terms=mode))
            runs.append(st.c[-1])
        diffs.append(np.abs(runs[0] - runs[1]).max())
    assert diffs[0] > diffs[1] > diffs[2] > 0


def test_forward_initial_state_and_mass():
    g = unit_grid(10)
    m = MediumFields.uniform(g, phi=0.25, d_m=0.01, d_t=0.01, d_l=0.1)
    N = 12
    h = np.zeros((N + 1, g.ncells))
    h[:, 5] += 0.5
    h[:, 40] -= 0.5
    st = run_forward(g, m, dipole_source(g, (1, 1), (8, 8)), h, 1.0, N)
    assert np.all(st.c[0] == 0)
    assert st.p.shape == st.c.shape == (N + 1, g.ncells)
    assert_allclose(st.times[-1], 1.0)
    for c in st.c[1:]:
        mass = g.integrate(m.phi * c)
        assert abs(mass) <= 1e-10 * g.integrate(np.abs(c))


def test_time_constant_source_reuses_pressure():
    g = unit_grid(8)
    m = MediumFields.uniform(g, phi=0.3, d_m=0.05)
    st = run_forward(g, m, dipole_source(g, (1, 1), (6, 6)), np.zeros((6, g.ncells)), 1.0, 5)
    assert all(np.array_equal(st.p[0], p) for p in st.p)


def test_forward_rejects_bad_control_shape():
    g = unit_grid(6)
    with pytest.raises(InvalidArgumentError):
        run_forward(g, MediumFields.uniform(g), np.zeros(g.ncells), np.zeros((3, g.ncells)), 1.0, 5)


def test_medium_validation():
    g = unit_grid(4)
    with pytest.raises(InvalidArgumentError):
        MediumFields(np.zeros(g.ncells), np.ones(g.ncells), 1.0, 0.0, 0.0)
    with pytest.raises(InvalidArgumentError):
        MediumFields(np.ones(g.ncells), -np.ones(g.ncells), 1.0, 0.0, 0.0)
    with pytest.raises(InvalidArgumentError):
        FlowSolver(unit_grid(5), MediumFields.uniform(g))
