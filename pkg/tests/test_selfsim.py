import json
import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from vfd import selfsim
from vfd.errors import ParameterOutOfRange, TimeBeyondExtinction


def test_lemma_bound_closed_form():
    assert selfsim.lemma_bound(-0.5) == pytest.approx((2.0 / 3.0) ** (2.0 / 3.0), rel=1e-15)


@pytest.mark.parametrize("m", [-0.2, -0.5, -0.8])
def test_profile_invariants(m):
    c = selfsim.integrate_profile(m, 1.0)
    rep = c.invariant_report()
    assert rep["positive"] and rep["strictly_decreasing"] and rep["h_positive"]
    assert c.bound_margin() > 0


def test_profile_matches_independent_integrator():
    # f' = f^(1-m) (m/(1+m) r f - F), F' = f  by an adaptive high-order method
    m, eta = -0.5, 1.0
    c = selfsim.integrate_profile(m, eta, r_max=20.0)

    def rhs(r, y):
        f, F = y
        return [f ** (1 - m) * (m / (1 + m) * r * f - F), f]

    sol = solve_ivp(rhs, (0, 20.0), [eta, 0.0], method="DOP853", rtol=1e-12, atol=1e-14,
                    dense_output=True)
    r = np.linspace(0, 20, 41)
    assert np.allclose(c(r), sol.sol(r)[0], rtol=1e-8, atol=1e-12)


@pytest.mark.parametrize("m", [-0.2, -0.5, -0.8])
def test_unit_mass_against_reference(m):
    assert selfsim.unit_mass(m) == pytest.approx(selfsim.A1_REFERENCE[m], rel=2e-3)


def test_scaling_law():
    # f_eta(r) = eta * phi(eta^((1-m)/2) r)
    m, eta = -0.5, 2.0
    phi = selfsim.integrate_profile(m, 1.0, r_max=40.0)
    f = selfsim.integrate_profile(m, eta, r_max=10.0)
    r = np.linspace(0, 10, 21)
    assert np.allclose(f(r), eta * phi(eta ** ((1 - m) / 2) * r), rtol=1e-7)


def test_calibration_inverts():
    m = -0.5
    for mu in (0.5, 1.0, 3.0):
        eta = selfsim.calibrate_eta(m, mu)
        assert selfsim.unit_mass(m) * eta ** ((1 + m) / 2) == pytest.approx(mu, rel=1e-13)


def test_bad_exponent():
    with pytest.raises(ParameterOutOfRange):
        selfsim.integrate_profile(0.5, 1.0)
    with pytest.raises(ParameterOutOfRange):
        selfsim.calibrate_eta(-0.5, -1.0)


def test_selfsimilar_time_limits(ss_solution):
    with pytest.raises(TimeBeyondExtinction):
        selfsim.selfsimilar_value(ss_solution, 0.0, 1.5)
    v = ss_solution(np.array([0.0, 1.0]), 0.0)
    assert np.all(v > 0)
    # even in x
    x = np.linspace(0.1, 5, 7)
    assert np.allclose(ss_solution(x, 0.3), ss_solution(-x, 0.3))


def test_selfsimilar_solves_pde(ss_solution):
    # v_t = (v^m/m)_xx at interior points, by finite differences
    m, t, h, k = -0.5, 0.3, 1e-3, 1e-5
    x = np.array([0.3, 1.0, 2.5, 6.0])
    vt = (ss_solution(x, t + k) - ss_solution(x, t - k)) / (2 * k)
    w = lambda y: ss_solution(y, t) ** m / m
    wxx = (w(x + h) - 2 * w(x) + w(x - h)) / h ** 2
    assert np.allclose(vt, wxx, rtol=2e-4)
    vt2 = selfsim.selfsimilar_time_derivative(ss_solution, x, t)
    assert np.allclose(vt, vt2, rtol=1e-6)


def test_slope_monotone_and_sandwich():
    c = selfsim.calibrated_profile(-0.5, 1.0)
    w = selfsim.asymptotic_slope(c, c.r_grid[1:])
    assert np.all(np.diff(w) >= 0)
    fit = selfsim.fit_sandwich(c, mu=1.0)
    assert fit.holds and fit.limit == pytest.approx(4.0)
    assert w[-1] < fit.limit


def test_exports(tmp_path):
    c = selfsim.integrate_profile(-0.5, 1.0, r_max=5.0)
    p = tmp_path / "p.csv"
    c.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "r,f,w"
    assert len(lines) == c.r_grid.size + 1
    meta = json.loads(c.metadata_json())
    assert set(meta) >= {"m", "eta", "mu", "a1", "dr", "r_max"}
    assert math.isclose(meta["eta"], 1.0)
