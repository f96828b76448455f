import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vfd import solver
from vfd.errors import NonPositiveInitial, ParameterOutOfRange
from vfd.solver import BoundarySpec, PdeState, SolverControls

from conftest import bump

M = -0.5


def test_potential_roundtrip():
    u = np.logspace(-6, 3, 20)
    assert np.allclose(solver.from_potential(solver.potential(u, M), M), u, rtol=1e-13)
    with pytest.raises(ParameterOutOfRange):
        solver.check_exponent(-1.0)


def test_dirichlet_value():
    assert solver.dirichlet_value(1.0, M, 40.0) == pytest.approx(1.0 / 400.0)


def test_initial_requires_positivity():
    grid = solver.make_grid(5.0, 0.5)
    with pytest.raises(NonPositiveInitial):
        solver.make_initial(bump, 0.0, grid)
    s = solver.make_initial(bump, 1e-6, grid)
    assert s.u.min() == pytest.approx(1e-6)


def test_constant_state_is_stationary():
    ctl = SolverControls(h=0.25, dt0=0.05, dt_max=0.05, fixed_dt=True)
    tr = solver.solve(np.full(41, 0.7), BoundarySpec.neumann(0.0, 0.0), M, 5.0, 0.5, ctl)
    assert np.allclose(tr.states[-1].u, 0.7, rtol=1e-12)


def test_neumann_mass_law_exact():
    f = lambda t: 1.0 + t
    g = lambda t: 0.5
    ctl = SolverControls(h=0.1, dt0=1e-3, dt_max=1e-2, epsilon=1e-6)
    tr = solver.solve(bump, BoundarySpec.neumann(f, g), M, 10.0, 0.4, ctl)
    t = np.concatenate([[0.0], tr.step_t])
    mass = np.concatenate([[tr.ledger.mass[0]], tr.step_mass])
    tm = 0.5 * (t[1:] + t[:-1])
    expected = -np.diff(t) * (f(tm) + 0.5)
    assert np.allclose(np.diff(mass), expected, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0.05, 5.0), min_size=21, max_size=21), st.floats(0.0, 2.0))
def test_one_step_mass_balance(vals, rate):
    u0 = np.array(vals)
    s = PdeState(solver.make_grid(1.0, 0.1), u0, 0.0)
    dt = 1e-3
    try:
        new, rep = solver.step(s, dt, BoundarySpec.neumann(rate, rate), M)
    except solver.PositivityLost:
        return
    assert new.mass() - s.mass() == pytest.approx(-2 * rate * dt, abs=1e-11)
    assert np.all(new.u > 0)


def test_dirichlet_boundary_values_imposed():
    R = 10.0
    ctl = SolverControls(h=0.1, dt0=1e-4, dt_max=1e-2, epsilon=1e-6, output_times=(0.2,))
    tr = solver.solve(bump, BoundarySpec.dirichlet_mu(2.0, M, R), M, R, 0.2, ctl)
    ub = solver.dirichlet_value(2.0, M, R)
    assert tr.states[-1].u[0] == pytest.approx(ub) and tr.states[-1].u[-1] == pytest.approx(ub)
    assert tr.states[-1].t == 0.2


def test_discrete_comparison_small_instance():
    """Two 20-node systems stepped side by side keep their order at every step."""
    x = solver.make_grid(1.9, 0.2)
    assert x.size == 20
    rng = np.random.default_rng(7)
    u_lo = 0.2 + rng.random(20)
    u_hi = u_lo + rng.random(20) * 0.3
    lo = PdeState(x, u_lo, 0.0)
    hi = PdeState(x, u_hi, 0.0)
    bc_lo = BoundarySpec.neumann(1.5, 1.5)  # stronger outflow for the lower solution
    bc_hi = BoundarySpec.neumann(1.0, 1.0)
    ctl = SolverControls(newton_tol=1e-13)
    for _ in range(40):
        lo, _ = solver.step(lo, 2e-3, bc_lo, M, ctl)
        hi, _ = solver.step(hi, 2e-3, bc_hi, M, ctl)
        assert np.all(lo.u <= hi.u + 1e-12)


def test_barrier_bound_dirichlet():
    R = 20.0
    ctl = SolverControls(h=0.1, dt0=1e-5, dt_max=2e-3, epsilon=1e-6)
    tr = solver.solve(bump, BoundarySpec.dirichlet_mu(1.0, M, R), M, R, 0.5, ctl)
    assert solver.barrier_check(tr, 1.0, 1.5) <= 1e-6
    assert np.all(np.isinf(solver.barrier(np.array([0.0, 1.5]), 1.0, 1.5, M)))


def test_extinction_flag_and_trajectory_io(tmp_path):
    ctl = SolverControls(h=0.1, dt0=1e-4, dt_max=1e-2, epsilon=1e-6, store_every=20)
    tr = solver.solve(bump, BoundarySpec.neumann(1.0, 1.0), M, 10.0, 5.0, ctl)
    assert tr.extinct and tr.states[-1].t < 1.0
    with pytest.raises(solver.ExtinctionReached):
        solver.solve(bump, BoundarySpec.neumann(1.0, 1.0), M, 10.0, 5.0, ctl, raise_on_extinction=True)
    p = tmp_path / "u.csv"
    tr.write_csv(p)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["t", "x", "u"]
    assert len(rows) == 1 + len(tr.states) * tr.x.size
    q = tmp_path / "ledger.csv"
    tr.write_ledger_csv(q)
    assert open(q).readline().strip() == "t,mass,flux_left,flux_right,ab_residual,newton_iters"


def test_fmt_17_digits():
    assert solver.fmt(0.1) == "0.10000000000000001"


def test_second_order_against_selfsimilar(ss_solution):
    R = 10.0
    sol = ss_solution
    left = lambda t: float(sol(np.array([-R]), t)[0])
    right = lambda t: float(sol(np.array([R]), t)[0])
    bc = BoundarySpec("dirichlet", left=left, right=right)
    errs = []
    for h in (0.4, 0.2, 0.1):
        dt = 0.5 * h * h
        ctl = SolverControls(h=h, dt0=dt, dt_max=dt, fixed_dt=True)
        tr = solver.solve(lambda x: sol(x, 0.0), bc, M, R, 0.5, ctl)
        errs.append(max(np.max(np.abs(s.u - sol(s.x, s.t))) for s in tr.states))
    assert np.all(np.log2(np.array(errs[:-1]) / np.array(errs[1:])) > 1.8)
