"""Radial self-similar profiles and the separable-in-similarity-variable solution.

The profile f(r) with f(0) = eta, f'(0) = 0 is integrated in first-order
integral form.  With F(r) = int_0^r f,

    f' = f^(1-m) * (m/(1+m) * r * f - F),    F' = f,

is a non-stiff explicit system, stepped with classical RK4.

Given a profile, v(x,t) = (T-t)^(1/(1+m)) f(|x| (T-t)^(-m/(1+m))) solves
u_t = (u^m/m)_xx and carries mass 2 mu (T-t) where mu = int_0^inf f.
"""
from __future__ import annotations

import csv
import functools
import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .errors import (
    NonPositiveProfile,
    ParameterOutOfRange,
    TailNotResolved,
    TimeBeyondExtinction,
)

# Unit-profile masses A1 = int_0^inf phi for eta = 1, computed once with an
# independent route: DOP853 (rtol 1e-13) on the second-order equation written
# for (f, f'/f^(1-m)), integrated to r = 1e5 plus the analytic power-law tail.
A1_REFERENCE = {
    -0.2: 1.4863780564618074,
    -0.5: 1.6966018034918111,
    -0.8: 2.402319207934953,
}


def lemma_bound(m: float) -> float:
    """Upper bound (2(1+m)/(1-m))^(1/(1-m)) on r^(2/(1-m)) f(r)."""
    return (2.0 * (1.0 + m) / (1.0 - m)) ** (1.0 / (1.0 - m))


def _check_m(m):
    if not (-1.0 < m < 0.0):
        raise ParameterOutOfRange(f"m must lie in (-1,0), got {m}")


@dataclass(frozen=True)
class ProfileCurve:
    m: float
    eta: float
    r_grid: np.ndarray
    f_values: np.ndarray
    F_values: np.ndarray  # running integral int_0^r f
    dr: float
    a1: Optional[float] = None
    mu: Optional[float] = None

    @property
    def r_max(self) -> float:
        return float(self.r_grid[-1])

    @property
    def df_values(self) -> np.ndarray:
        """f' recovered from the integral form of the ODE."""
        m = self.m
        r, f, F = self.r_grid, self.f_values, self.F_values
        return f ** (1.0 - m) * (m / (1.0 + m) * r * f - F)

    @functools.cached_property
    def _spline(self):
        return CubicHermiteSpline(self.r_grid, self.f_values, self.df_values)

    @property
    def tail_rate(self) -> float:
        """mu-hat fitted so that (mu_hat |m| r)^(1/m) matches f at r_max."""
        m = self.m
        return self.f_values[-1] ** m / (abs(m) * self.r_max)

    def tail_mass(self) -> float:
        """int_{r_max}^inf (mu_hat |m| r)^(1/m) dr, finite because 1/m < -1."""
        m = self.m
        return float(self.f_values[-1] * self.r_max * (-m) / (1.0 + m))

    def __call__(self, r):
        """Evaluate f; beyond r_max the fitted power-law asymptote is used."""
        r = np.abs(np.asarray(r, dtype=float))
        out = np.empty_like(r)
        inside = r <= self.r_max
        out[inside] = self._spline(r[inside])
        if np.any(~inside):
            out[~inside] = (self.tail_rate * abs(self.m) * r[~inside]) ** (1.0 / self.m)
        return out

    def bound_margin(self) -> float:
        """Smallest gap between the universal bound and r^(2/(1-m)) f(r), r > 0."""
        m = self.m
        r = self.r_grid[1:]
        return float(np.min(lemma_bound(m) - r ** (2.0 / (1.0 - m)) * self.f_values[1:]))

    def invariant_report(self) -> dict:
        f = self.f_values
        r = self.r_grid
        m = self.m
        # central differences for f' in h = f - m r f'
        fp = np.gradient(f, r)
        h = f - m * r * fp
        return {
            "positive": bool(np.all(f > 0)),
            "strictly_decreasing": bool(np.all(np.diff(f) < 0)),
            "center_value": bool(f[0] == self.eta),
            "center_slope": float(abs((f[1] - f[0]) / (r[1] - r[0]))),
            "bound_margin": self.bound_margin(),
            "h_positive": bool(np.all(h > 0)),
        }

    def to_csv(self, path) -> None:
        w = asymptotic_slope(self, self.r_grid)
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["r", "f", "w"])
            for ri, fi, wi in zip(self.r_grid, self.f_values, w):
                out.writerow([format(ri, ".17g"), format(fi, ".17g"), format(wi, ".17g")])

    def metadata(self) -> dict:
        return {"m": self.m, "eta": self.eta, "mu": self.mu, "a1": self.a1,
                "dr": self.dr, "r_max": self.r_max}

    def metadata_json(self) -> str:
        return json.dumps(self.metadata(), sort_keys=True)


def default_step(m: float, eta: float) -> float:
    return 1e-3 * max(1.0, eta ** ((m - 1.0) / 2.0))


def _rk4(m, eta, r0, f0, F0, steps, r_stop, growth):
    """Integrate from (r0, f0, F0).  Pure-float loop; returns python lists."""
    c = m / (1.0 + m)
    e = 1.0 - m
    rs, fs, Fs = [], [], []
    r, f, F = r0, f0, F0
    dr = steps
    while r < r_stop - 1e-12 * r_stop:
        hstep = max(dr, growth * r) if growth else dr
        if r + hstep > r_stop:
            hstep = r_stop - r
        h2 = 0.5 * hstep
        k1 = f ** e * (c * r * f - F)
        l1 = f
        fa = f + h2 * k1
        if fa <= 0:
            raise NonPositiveProfile(f"f became nonpositive near r={r:.6g}; reduce dr")
        Fa = F + h2 * l1
        k2 = fa ** e * (c * (r + h2) * fa - Fa)
        fb = f + h2 * k2
        if fb <= 0:
            raise NonPositiveProfile(f"f became nonpositive near r={r:.6g}; reduce dr")
        Fb = F + h2 * fa
        k3 = fb ** e * (c * (r + h2) * fb - Fb)
        fc = f + hstep * k3
        if fc <= 0:
            raise NonPositiveProfile(f"f became nonpositive near r={r:.6g}; reduce dr")
        Fc = F + hstep * fb
        k4 = fc ** e * (c * (r + hstep) * fc - Fc)
        f = f + hstep / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        F = F + hstep / 6.0 * (l1 + 2 * fa + 2 * fb + fc)
        r = r + hstep
        if f <= 0:
            raise NonPositiveProfile(f"f became nonpositive at r={r:.6g}; reduce dr")
        rs.append(r)
        fs.append(f)
        Fs.append(F)
    return rs, fs, Fs


def integrate_profile(m: float, eta: float, r_max: Optional[float] = None,
                      dr: Optional[float] = None, growth: float = 0.0) -> ProfileCurve:
    """RK4 on the coupled system (f, F) from f(0)=eta, F(0)=0.

    With ``r_max=None`` the cutoff is extended until f(r_max) < 1e-3 * eta.
    ``growth > 0`` switches to steps max(dr, growth*r), which reaches very large
    radii cheaply where the profile is a slowly varying power law.
    """
    _check_m(m)
    if eta <= 0:
        raise ParameterOutOfRange("eta must be positive")
    dr = default_step(m, eta) if dr is None else float(dr)
    if dr <= 0:
        raise ParameterOutOfRange("dr must be positive")
    rs, fs, Fs = [0.0], [float(eta)], [0.0]
    if r_max is not None:
        if r_max < 10 * dr:
            raise ParameterOutOfRange("r_max must be at least 10*dr")
        a, b, c = _rk4(m, eta, 0.0, float(eta), 0.0, dr, float(r_max), growth)
        rs += a
        fs += b
        Fs += c
    else:
        # scale of the profile: f(r) = eta phi(eta^((1-m)/2) r)
        chunk = 10.0 * eta ** ((m - 1.0) / 2.0)
        r_stop = chunk
        while True:
            a, b, c = _rk4(m, eta, rs[-1], fs[-1], Fs[-1], dr, r_stop, growth)
            rs += a
            fs += b
            Fs += c
            if fs[-1] < 1e-3 * eta:
                break
            r_stop += chunk
            chunk *= 1.5
    r = np.asarray(rs)
    f = np.asarray(fs)
    F = np.asarray(Fs)
    curve = ProfileCurve(m=m, eta=float(eta), r_grid=r, f_values=f, F_values=F, dr=dr)
    mu = float(np.trapezoid(f, r) + curve.tail_mass())
    return replace(curve, mu=mu, a1=mu / eta ** ((1.0 + m) / 2.0))


@dataclass(frozen=True)
class UnitMass:
    a1: float
    grid: float
    tail: float


def unit_profile_mass(curve: ProfileCurve, require_unit: bool = True) -> UnitMass:
    """Trapezoid mass of the profile plus the analytic power-law tail."""
    if require_unit and curve.eta != 1.0:
        raise ParameterOutOfRange("unit_profile_mass expects a profile with eta = 1")
    grid = float(np.trapezoid(curve.f_values, curve.r_grid))
    fend = curve.f_values[-1]
    tail = curve.tail_mass() if fend > 0 else 0.0
    if tail > 0.05 * grid:
        raise TailNotResolved(
            f"tail {tail:.4g} exceeds 5% of grid mass {grid:.4g}; increase r_max")
    return UnitMass(a1=grid + tail, grid=grid, tail=tail)


@functools.lru_cache(maxsize=None)
def unit_profile(m: float) -> ProfileCurve:
    """eta = 1 profile reaching far enough that the tail is below 1% of the mass."""
    r_max = 1e3
    while True:
        curve = integrate_profile(m, 1.0, r_max=r_max, dr=1e-3, growth=1e-3)
        if curve.tail_mass() < 0.01 * np.trapezoid(curve.f_values, curve.r_grid) or r_max >= 1e9:
            return curve
        r_max *= 10.0


def unit_mass(m: float) -> float:
    return unit_profile_mass(unit_profile(m)).a1


def calibrate_eta(m: float, mu: float, a1: Optional[float] = None) -> float:
    """eta with A1 * eta^((1+m)/2) = mu."""
    _check_m(m)
    if mu <= 0:
        raise ParameterOutOfRange("mu must be positive")
    a1 = unit_mass(m) if a1 is None else a1
    return (mu / a1) ** (2.0 / (1.0 + m))


def rescale_unit(unit: ProfileCurve, eta: float) -> ProfileCurve:
    """f(r) = eta * phi(eta^((1-m)/2) r) from the eta = 1 profile phi."""
    m = unit.m
    s = eta ** ((1.0 - m) / 2.0)
    k = eta ** ((1.0 + m) / 2.0)
    a1 = unit.a1
    return ProfileCurve(
        m=m, eta=eta, r_grid=unit.r_grid / s, f_values=eta * unit.f_values,
        F_values=k * unit.F_values, dr=unit.dr / s, a1=a1,
        mu=None if a1 is None else a1 * k,
    )


def calibrated_profile(m: float, mu: float, dr: Optional[float] = None,
                       r_max: Optional[float] = None) -> ProfileCurve:
    """Profile with half-mass mu, integrated from scratch at the calibrated eta."""
    eta = calibrate_eta(m, mu)
    if r_max is None:
        # comfortably inside the asymptotic regime, reached cheaply by stretched steps
        r_max = 1e3 * eta ** ((m - 1.0) / 2.0)
    curve = integrate_profile(m, eta, r_max=r_max, dr=dr, growth=1e-3)
    return curve


@dataclass(frozen=True)
class SelfSimilarSolution:
    profile: ProfileCurve
    extinction_time: float

    @property
    def m(self) -> float:
        return self.profile.m

    @property
    def mu(self) -> float:
        return self.profile.mu

    def value(self, x, t, return_flag=False):
        return selfsimilar_value(self, x, t, return_flag=return_flag)

    def __call__(self, x, t=0.0):
        return selfsimilar_value(self, x, t)


def selfsimilar_value(sol: SelfSimilarSolution, x, t, return_flag=False):
    """v(x,t) = (T-t)^(1/(1+m)) f(|x| (T-t)^(-m/(1+m)))."""
    T = sol.extinction_time
    m = sol.m
    t = np.asarray(t, dtype=float)
    if np.any(t >= T):
        raise TimeBeyondExtinction(f"t must be below the extinction time {T}")
    tau = T - t
    r = np.abs(np.asarray(x, dtype=float)) * tau ** (-m / (1.0 + m))
    v = tau ** (1.0 / (1.0 + m)) * sol.profile(r)
    if return_flag:
        return v, r > sol.profile.r_max
    return v


def selfsimilar_time_derivative(sol: SelfSimilarSolution, x, t):
    """Exact v_t from the chain rule (used for boundary-flux bookkeeping)."""
    m = sol.m
    tau = sol.extinction_time - np.asarray(t, dtype=float)
    s = tau ** (-m / (1.0 + m))
    r = np.abs(np.asarray(x, dtype=float)) * s
    p = sol.profile
    fp = p._spline.derivative()(np.minimum(r, p.r_max))
    f = p(r)
    return -(1.0 / (1.0 + m)) * tau ** (1.0 / (1.0 + m) - 1.0) * (f - m * r * fp)


def spatial_mass(sol: SelfSimilarSolution, t: float, x_max: Optional[float] = None,
                 n: int = 200001) -> float:
    """int_R v(x,t) dx by trapezoid on [0, x_max] plus the asymptotic tail, doubled."""
    m = sol.m
    tau = sol.extinction_time - t
    s = tau ** (-m / (1.0 + m))
    if x_max is None:
        x_max = sol.profile.r_max / s
    x = np.linspace(0.0, x_max, n)
    v = selfsimilar_value(sol, x, t)
    grid = np.trapezoid(v, x)
    # tail of (c |x|)^(1/m): int_X^inf = v(X) X (-m)/(1+m)
    tail = v[-1] * x_max * (-m) / (1.0 + m)
    return float(2.0 * (grid + tail))


def asymptotic_slope(curve: ProfileCurve, r):
    """w(r) = r^(-1/m) f(r)."""
    r = np.asarray(r, dtype=float)
    return r ** (-1.0 / curve.m) * curve(r)


@dataclass(frozen=True)
class SandwichFit:
    a: float
    r0: float
    limit: float
    holds: bool


def fit_sandwich(curve: ProfileCurve, mu: Optional[float] = None,
                 fit_from: Optional[float] = None) -> SandwichFit:
    """Fit a in (mu|m|r + a)^(1/m) <= f(r) <= (mu|m|r)^(1/m) and find r0.

    a is the largest r*(w^m - mu|m|) over r >= fit_from; r0 is the first grid
    radius beyond which both inequalities hold, kept above a/(mu|m|).
    """
    m = curve.m
    mu = curve.mu if mu is None else mu
    r = curve.r_grid[1:]
    f = curve.f_values[1:]
    w = r ** (-1.0 / m) * f
    excess = r * (w ** m - mu * abs(m))
    if fit_from is None:
        fit_from = curve.r_max / 10.0
    a = float(np.max(excess[r >= fit_from]))
    lower = (mu * abs(m) * r + a) ** (1.0 / m)
    upper = (mu * abs(m) * r) ** (1.0 / m)
    ok = (lower <= f * (1 + 1e-12)) & (f <= upper * (1 + 1e-12))
    bad = np.nonzero(~ok)[0]
    r0 = float(r[bad[-1] + 1]) if bad.size and bad[-1] + 1 < r.size else float(r[0])
    if bad.size and bad[-1] + 1 >= r.size:
        r0 = math.inf
    r0 = max(r0, np.nextafter(a / (mu * abs(m)), math.inf))
    sel = r >= r0
    holds = bool(np.all(ok[sel])) if np.any(sel) else False
    return SandwichFit(a=a, r0=r0, limit=(mu * abs(m)) ** (1.0 / m), holds=holds)
