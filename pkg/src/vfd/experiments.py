"""Numerical experiments on the Dirichlet and Neumann approximations.

Every experiment solves finite-domain problems with :mod:`vfd.solver`, samples
the trajectories on a compact window [-L, L] x [a, b] and compares them with
each other or with the exact laws of the Cauchy problem (mass law, extinction
time, far-field slope, orderings).
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from . import selfsim
from .errors import (
    HypothesisViolated,
    NotNearExtinction,
    ParameterOutOfRange,
    ProbeInsideWindow,
    WindowOutsideDomain,
)
from .solver import (
    BoundarySpec,
    PdeState,
    SolverControls,
    Trajectory,
    check_exponent,
    fmt,
    make_grid,
    make_initial,
    solve,
)

DEFAULT_TOLERANCES = {
    "compact": 1e-2,          # d_last in the expanding-domain test
    "mass_constant": 0.01,    # relative, constant mu
    "mass_general": 0.02,     # relative, time-dependent (f, g)
    "extinction": 0.10,       # |T_est - T| / T
    "extinction_ratio": 0.05,  # T(2 mu) / T(mu) vs 1/2
    "slope": 0.05,
    "equal": 1e-2,            # Dirichlet vs Neumann, composed vs direct
    "order": 1e-5,            # 10x the discretization tolerance of 1e-6
    "barrier": 1e-6,
    "flux": 0.10,
}


class Rate:
    """Boundary rate f(t) >= 0: polynomial in t or right-continuous step function.

    ``Rate(1.0)`` is constant, ``Rate([1.0, 1.0])`` is 1 + t and
    ``Rate.steps([1, 2], [0.3])`` equals 1 on [0, 0.3) and 2 afterwards.
    """

    def __init__(self, coeffs=(1.0,), values=None, breaks=None):
        if np.isscalar(coeffs):
            coeffs = (float(coeffs),)
        self.coeffs = tuple(float(c) for c in coeffs)
        self.values = None if values is None else tuple(float(v) for v in values)
        self.breaks = None if breaks is None else tuple(float(b) for b in breaks)
        if self.values is not None and len(self.values) != len(self.breaks) + 1:
            raise ParameterOutOfRange("step rate needs len(values) == len(breaks) + 1")
        if self.breaks is not None and list(self.breaks) != sorted(self.breaks):
            raise ParameterOutOfRange("step breaks must be increasing")

    @classmethod
    def steps(cls, values, breaks):
        return cls(values=values, breaks=breaks)

    @property
    def is_step(self) -> bool:
        return self.values is not None

    def __call__(self, t):
        if self.is_step:
            return self.values[int(np.searchsorted(self.breaks, t, side="right"))]
        return float(sum(c * t ** k for k, c in enumerate(self.coeffs)))

    def integral(self, t) -> float:
        """Exact int_0^t."""
        if self.is_step:
            edges = (0.0,) + self.breaks
            total = 0.0
            for i, v in enumerate(self.values):
                lo = edges[i]
                hi = self.breaks[i] if i < len(self.breaks) else math.inf
                if t <= lo:
                    break
                total += v * (min(t, hi) - lo)
            return total
        return float(sum(c * t ** (k + 1) / (k + 1) for k, c in enumerate(self.coeffs)))

    def minimum(self, t_end) -> float:
        if self.is_step:
            return min(self.values)
        ts = np.linspace(0.0, t_end, 1001)
        return float(min(self(t) for t in ts))

    def describe(self):
        if self.is_step:
            return {"values": list(self.values), "breaks": list(self.breaks)}
        return {"coeffs": list(self.coeffs)}

    def __repr__(self):
        return f"Rate({self.describe()})"


def as_rate(r) -> Rate:
    return r if isinstance(r, Rate) else Rate(r)


@dataclass
class InitialDatum:
    """Named initial data with the growth-condition metadata (mu0, R0).

    bump: (mass/width) cos^2(pi x/(2 width)) on |x| < width, zero outside.
    selfsimilar: v(., 0) for half-mass ``ss_mu`` and extinction time ``ss_T``.
    custom: piecewise-linear interpolation of (``x``, ``u``) samples.
    """

    kind: str = "bump"
    mass: float = 2.0
    width: float = 1.0
    mu0: float = 1.0
    R0: float = 1.5
    ss_mu: float = 1.0
    ss_T: float = 1.0
    x: Optional[Sequence[float]] = None
    u: Optional[Sequence[float]] = None
    m: float = -0.5

    def __post_init__(self):
        if self.kind not in ("bump", "selfsimilar", "custom"):
            raise ParameterOutOfRange(f"unknown initial datum {self.kind!r}")
        if self.kind == "selfsimilar":
            self.mass = 2.0 * self.ss_mu * self.ss_T
        self._sol = None

    def solution(self) -> selfsim.SelfSimilarSolution:
        if self._sol is None:
            prof = selfsim.calibrated_profile(self.m, self.ss_mu)
            self._sol = selfsim.SelfSimilarSolution(prof, self.ss_T)
        return self._sol

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "bump":
            w = self.width
            return np.where(np.abs(x) < w, (self.mass / w) * np.cos(np.pi * x / (2 * w)) ** 2, 0.0)
        if self.kind == "selfsimilar":
            return self.solution()(x, 0.0)
        xs = np.asarray(self.x, dtype=float)
        us = np.asarray(self.u, dtype=float)
        return np.interp(x, xs, us, left=0.0, right=0.0)

    def total_mass(self) -> float:
        if self.kind == "custom":
            return float(np.trapezoid(self.u, self.x))
        return float(self.mass)

    def describe(self):
        d = {"kind": self.kind, "mass": self.total_mass(), "mu0": self.mu0, "R0": self.R0}
        if self.kind == "bump":
            d["width"] = self.width
        if self.kind == "selfsimilar":
            d.update(ss_mu=self.ss_mu, ss_T=self.ss_T)
        return d


@dataclass
class ExperimentConfig:
    m: float = -0.5
    u0: InitialDatum = field(default_factory=InitialDatum)
    mu: float = 1.0
    f: Optional[Rate] = None  # right-side rate; defaults to mu
    g: Optional[Rate] = None  # left-side rate; defaults to mu
    R_list: Sequence[float] = (10.0, 20.0, 40.0)
    L: float = 2.0
    a: float = 0.1
    b: float = 0.5
    n_times: int = 5
    n_probe: int = 41
    h: float = 0.1
    dt0: float = 1e-5
    dt_max: float = 2e-3
    epsilon: float = 1e-6
    fixed_dt: Optional[float] = None
    threads: int = 1
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))

    def __post_init__(self):
        check_exponent(self.m)
        self.u0.m = self.m
        if self.f is None:
            self.f = Rate(self.mu)
        if self.g is None:
            self.g = Rate(self.mu)
        self.f = as_rate(self.f)
        self.g = as_rate(self.g)
        R = list(self.R_list)
        if any(b <= a for a, b in zip(R, R[1:])):
            raise ParameterOutOfRange("R_list must be increasing")
        if not (0 < self.a < self.b):
            raise ParameterOutOfRange("window times need 0 < a < b")
        tol = dict(DEFAULT_TOLERANCES)
        tol.update(self.tolerances)
        self.tolerances = tol

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.a, self.b, self.n_times)

    def extinction_time(self) -> float:
        return predicted_extinction(self.u0.total_mass(), self.f, self.g)

    def controls(self, output_times=()) -> SolverControls:
        if self.fixed_dt is not None:
            return SolverControls(h=self.h, dt0=self.fixed_dt, dt_max=self.fixed_dt, fixed_dt=True,
                                  epsilon=self.epsilon, output_times=tuple(output_times))
        return SolverControls(h=self.h, dt0=self.dt0, dt_max=self.dt_max, epsilon=self.epsilon,
                              output_times=tuple(output_times))

    def describe(self) -> dict:
        return {
            "m": self.m, "u0": self.u0.describe(), "mu": self.mu,
            "f": self.f.describe(), "g": self.g.describe(),
            "R_list": list(self.R_list), "window": [self.L, self.a, self.b],
            "h": self.h, "dt0": self.dt0, "dt_max": self.dt_max,
            "epsilon": self.epsilon, "fixed_dt": self.fixed_dt,
        }


def _flux_integral(f: Rate, g: Rate, t: float) -> float:
    """int_0^t (f+g) by adaptive quadrature, splitting at step breaks."""
    if t <= 0:
        return 0.0
    pts = sorted(b for r in (f, g) if r.is_step for b in r.breaks if 0 < b < t)
    return quad(lambda s: f(s) + g(s), 0.0, t, limit=200, points=pts or None)[0]


def predicted_extinction(mass0: float, f, g) -> float:
    """T with int_0^T (f+g) ds = mass0, by quadrature and bracketing."""
    f, g = as_rate(f), as_rate(g)

    def excess(T):
        return _flux_integral(f, g, T) - mass0

    hi = 1.0
    while excess(hi) < 0:
        hi *= 2.0
        if hi > 1e12:
            raise ParameterOutOfRange("flux too small: no extinction")
    return float(brentq(excess, 0.0, hi, xtol=1e-14, rtol=1e-14))


def predicted_mass(mass0: float, f, g, t) -> np.ndarray:
    """mass0 - int_0^t (f + g), integral by adaptive quadrature."""
    f, g = as_rate(f), as_rate(g)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return np.array([mass0 - _flux_integral(f, g, ti) for ti in t])


# --------------------------------------------------------------------- solves

def _initial_state(cfg: ExperimentConfig, R: float) -> PdeState:
    return make_initial(cfg.u0, cfg.epsilon, make_grid(R, cfg.h))


def run_dirichlet(cfg: ExperimentConfig, R: float, t_end: Optional[float] = None,
                  f=None, g=None, output_times=None) -> Trajectory:
    f = cfg.f if f is None else as_rate(f)
    g = cfg.g if g is None else as_rate(g)
    bc = BoundarySpec.dirichlet_rates(f, g, cfg.m, R)
    times = cfg.times if output_times is None else output_times
    return solve(_initial_state(cfg, R), bc, cfg.m, R, cfg.b if t_end is None else t_end,
                 cfg.controls(times))


def run_neumann(cfg: ExperimentConfig, R: float, t_end: Optional[float] = None,
                f=None, g=None, output_times=None) -> Trajectory:
    f = cfg.f if f is None else as_rate(f)
    g = cfg.g if g is None else as_rate(g)
    bc = BoundarySpec.neumann(f, g)
    times = cfg.times if output_times is None else output_times
    return solve(_initial_state(cfg, R), bc, cfg.m, R, cfg.b if t_end is None else t_end,
                 cfg.controls(times))


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def window_values(traj: Trajectory, L: float, times, n_probe: int) -> np.ndarray:
    """u on the probe grid linspace(-L, L, n_probe) at the stored states nearest to ``times``."""
    if L >= traj.states[0].R:
        raise WindowOutsideDomain(f"window half-width {L} not inside domain {traj.states[0].R}")
    xp = np.linspace(-L, L, n_probe)
    return np.vstack([np.interp(xp, traj.x, traj.at(t).u) for t in times])


def _sup_diff(ta, tb, cfg, n_probe=None):
    n = cfg.n_probe if n_probe is None else n_probe
    return float(np.max(np.abs(window_values(ta, cfg.L, cfg.times, n)
                               - window_values(tb, cfg.L, cfg.times, n))))


# --------------------------------------------------------------------- reports

@dataclass
class ConvergenceReport:
    name: str
    R_list: list
    d_k: list
    d_k_dense: list
    flags: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    mass_table: Optional[dict] = None
    slope_table: Optional[dict] = None

    @property
    def passed(self) -> bool:
        return all(self.flags.values())

    def summary(self) -> dict:
        d = {
            "name": self.name, "R_list": list(self.R_list),
            "d_k": list(self.d_k), "d_k_dense": list(self.d_k_dense),
            "flags": dict(self.flags), "tolerances": dict(self.tolerances),
            "extra": self.extra, "passed": self.passed,
        }
        return json.loads(json.dumps(d, default=_json_default))

    def write(self, out_dir) -> list:
        """report.json, dk.csv and, when present, mass.csv and slope.csv."""
        import os
        written = []
        path = os.path.join(out_dir, "report.json")
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True, default=_json_default)
        written.append(path)
        path = os.path.join(out_dir, "dk.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "R", "d_k"])
            for k, dk in enumerate(self.d_k, start=1):
                w.writerow([k, fmt(self.R_list[k - 1]), fmt(dk)])
        written.append(path)
        if self.mass_table is not None:
            path = os.path.join(out_dir, "mass.csv")
            mt = self.mass_table
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", "mass", "predicted_mass", "deviation"])
                for row in zip(mt["t"], mt["mass"], mt["predicted"], mt["deviation"]):
                    w.writerow([fmt(v) for v in row])
            written.append(path)
        if self.slope_table is not None:
            path = os.path.join(out_dir, "slope.csv")
            st = self.slope_table
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["x", "t", "slope"])
                for xi, ti, si in zip(st["x"], st["t"], st["slope"]):
                    w.writerow([fmt(xi), fmt(ti), fmt(si)])
            written.append(path)
        return written


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


# ------------------------------------------------------------ expanding domain

def expanding_domain(cfg: ExperimentConfig, kind: str = "dirichlet") -> ConvergenceReport:
    """d_k = sup over the window of |u^{R_k} - u^{R_{k+1}}| along R_list."""
    R_list = list(cfg.R_list)
    if cfg.L >= min(R_list):
        raise WindowOutsideDomain("window must lie inside the smallest domain")
    runner = run_dirichlet if kind == "dirichlet" else run_neumann
    trajs = _map(lambda R: runner(cfg, R), R_list, cfg.threads)
    d = [_sup_diff(a, b, cfg) for a, b in zip(trajs, trajs[1:])]
    d_dense = [_sup_diff(a, b, cfg, 2 * cfg.n_probe - 1) for a, b in zip(trajs, trajs[1:])]
    tol = cfg.tolerances["compact"]
    tail = d[1:] if len(d) > 2 else d
    flags = {
        "decreasing": bool(all(y < x for x, y in zip(tail, tail[1:]))) if len(tail) > 1 else True,
        "d_last_below_tol": bool(d[-1] < tol),
    }
    # the mass law concerns the flux problem; Dirichlet domain mass misses the tail
    neu = trajs[-1] if kind == "neumann" else run_neumann(cfg, R_list[-1])
    mass = mass_law_check(neu, cfg.f, cfg.g, mass0=cfg.u0.total_mass(),
                          window=(cfg.a, cfg.b))
    rep = ConvergenceReport(
        name=f"expanding_domain_{kind}", R_list=R_list, d_k=d, d_k_dense=d_dense,
        flags=flags, tolerances={"compact": tol},
        extra={"config": cfg.describe(), "mass_law_max_deviation": mass.max_deviation},
        mass_table=mass.table(),
    )
    rep._trajectories = trajs
    return rep


# -------------------------------------------------------------------- mass law

@dataclass
class MassLawResult:
    t: np.ndarray
    mass: np.ndarray
    predicted: np.ndarray
    deviation: np.ndarray
    max_deviation: float
    tail_band: Optional[np.ndarray] = None

    def table(self) -> dict:
        return {"t": self.t, "mass": self.mass, "predicted": self.predicted,
                "deviation": self.deviation}


def barrier_tail(R: float, mu0: float, R0: float, m: float) -> float:
    """2 * int_R^inf (mu0|m|(x-R0))^(1/m) dx: mass the barrier allows beyond +-R."""
    if R <= R0:
        return math.inf
    p = 1.0 + 1.0 / m
    return float(2.0 * (mu0 * abs(m)) ** (1.0 / m) * (R - R0) ** p / (-p))


def mass_law_check(traj: Trajectory, f, g, mass0: Optional[float] = None,
                   window=None, tail: bool = False, mu0: float = 1.0,
                   R0: float = 1.5) -> MassLawResult:
    """Relative deviation of the domain mass from mass0 - int_0^t (f+g).

    ``mass0`` defaults to the discrete initial mass of the run.  With
    ``tail=True`` the barrier bound on the mass beyond +-R is reported as an
    uncertainty band (upper end added to the domain mass).
    """
    L = traj.ledger
    t = np.asarray(L.t)
    mass = np.asarray(L.mass)
    m0 = mass[0] if mass0 is None else mass0
    sel = np.ones_like(t, dtype=bool) if window is None else (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
    t, mass = t[sel], mass[sel]
    pred = predicted_mass(m0, f, g, t)
    band = None
    if tail:
        band = np.full(t.shape, barrier_tail(traj.states[0].R, mu0, R0, traj.m))
    dev = np.abs(mass - pred) / np.abs(pred)
    return MassLawResult(t=t, mass=mass, predicted=pred, deviation=dev,
                         max_deviation=float(dev.max()) if dev.size else 0.0, tail_band=band)


# ------------------------------------------------------------------ extinction

@dataclass
class ExtinctionEstimate:
    T_est: float
    slope: float
    t_fit: tuple


def extinction_time(traj: Trajectory, fraction: float = 0.1) -> ExtinctionEstimate:
    """Zero of the straight line fitted to the last ``fraction`` of the mass curve."""
    if not traj.extinct:
        raise NotNearExtinction("trajectory stopped before the extinction threshold")
    t = traj.step_t
    mass = traj.step_mass
    t_last = t[-1]
    sel = t >= (1.0 - fraction) * t_last
    if sel.sum() < 2:
        sel = np.arange(t.size) >= t.size - 2
    slope, icept = np.polyfit(t[sel], mass[sel], 1)
    if slope >= 0:
        raise NotNearExtinction("mass is not decreasing near the end of the run")
    return ExtinctionEstimate(T_est=float(-icept / slope), slope=float(slope),
                              t_fit=(float(t[sel][0]), float(t_last)))


def run_to_extinction(cfg: ExperimentConfig, R: Optional[float] = None, f=None, g=None,
                      t_cap: Optional[float] = None) -> Trajectory:
    """Neumann run continued until the extinction threshold is crossed."""
    R = max(cfg.R_list) if R is None else R
    f = cfg.f if f is None else as_rate(f)
    g = cfg.g if g is None else as_rate(g)
    T = predicted_extinction(cfg.u0.total_mass(), f, g)
    t_cap = 3.0 * T + 1.0 if t_cap is None else t_cap
    return run_neumann(cfg, R, t_end=t_cap, f=f, g=g, output_times=())


# ----------------------------------------------------------------------- slope

@dataclass
class SlopeProfile:
    x: np.ndarray
    t: np.ndarray
    slope: np.ndarray  # shape (len(t), len(x)); u^m/(m x)
    dev_right: float
    dev_left: float
    dev_by_station: dict

    def table(self) -> dict:
        xs, ts, ss = [], [], []
        for i, ti in enumerate(self.t):
            for j, xj in enumerate(self.x):
                xs.append(xj)
                ts.append(ti)
                ss.append(self.slope[i, j])
        return {"x": xs, "t": ts, "slope": ss}


def slope_at_infinity(traj: Trajectory, times, f=1.0, g=1.0, fraction: float = 0.75,
                      window_L: Optional[float] = None,
                      stations=(0.5, 0.625, 0.75, 0.875)) -> SlopeProfile:
    """s(x,t) = u^m/(m x) at x = +-fraction*R; deviations |s + f(t)| and |s - g(t)|."""
    f, g = as_rate(f), as_rate(g)
    R = traj.states[0].R
    x = traj.x
    m = traj.m
    if window_L is not None and fraction * R <= window_L:
        raise ProbeInsideWindow(f"probe |x|={fraction * R} lies inside the window")

    def s_at(state, xi):
        u = np.interp(xi, x, state.u)
        return u ** m / (m * xi)

    probes = np.array([-fraction * R, fraction * R])
    S = np.array([[s_at(traj.at(t), xi) for xi in probes] for t in times])
    dev_right = max(abs(S[i, 1] + f(t)) for i, t in enumerate(times))
    dev_left = max(abs(S[i, 0] - g(t)) for i, t in enumerate(times))
    by_station = {}
    for c in stations:
        right = max(abs(s_at(traj.at(t), c * R) + f(t)) for t in times)
        left = max(abs(s_at(traj.at(t), -c * R) - g(t)) for t in times)
        by_station[c] = max(right, left)
    return SlopeProfile(x=probes, t=np.asarray(times), slope=S, dev_right=float(dev_right),
                        dev_left=float(dev_left), dev_by_station=by_station)


# --------------------------------------------------------- Dirichlet vs Neumann

def compare_dirichlet_neumann(cfg: ExperimentConfig) -> ConvergenceReport:
    """Sup-window difference of Dirichlet and Neumann solutions for each R."""
    R_list = list(cfg.R_list)

    def both(R):
        return run_dirichlet(cfg, R), run_neumann(cfg, R)

    pairs = _map(both, R_list, cfg.threads)
    d = [_sup_diff(a, b, cfg) for a, b in pairs]
    d_dense = [_sup_diff(a, b, cfg, 2 * cfg.n_probe - 1) for a, b in pairs]
    tol = cfg.tolerances["equal"]
    flags = {
        "decreasing": bool(all(y < x for x, y in zip(d, d[1:]))),
        "last_below_tol": bool(d[-1] < tol),
    }
    # first moment drift: heavier outflow on one side moves mass to the other
    dn = pairs[-1][1]
    xs = dn.x
    moments = [float(np.trapezoid(xs * s.u, xs)) for s in dn.states]
    rep = ConvergenceReport(
        name="compare_dirichlet_neumann", R_list=R_list, d_k=d, d_k_dense=d_dense,
        flags=flags, tolerances={"equal": tol},
        extra={"config": cfg.describe(), "first_moment_final": moments[-1]},
    )
    rep._pairs = pairs
    return rep


# ------------------------------------------------------------------- orderings

def positive_excess(lesser: Trajectory, greater: Trajectory, L: Optional[float] = None) -> float:
    """max over common stored states (and |x| <= L) of (u_lesser - u_greater)_+."""
    x = lesser.x
    if greater.x.shape != x.shape:
        raise HypothesisViolated("trajectories must share a grid")
    sel = np.ones_like(x, dtype=bool) if L is None else np.abs(x) <= L + 1e-12
    tg = greater.times
    worst = 0.0
    for s in lesser.states:
        j = int(np.argmin(np.abs(tg - s.t)))
        if abs(tg[j] - s.t) > 1e-12 * max(1.0, s.t):
            continue
        worst = max(worst, float(np.max(s.u[sel] - greater.states[j].u[sel])))
    return max(worst, 0.0)


def ordered_pair_check(cfg: ExperimentConfig, f1, f2, u01=None, u02=None,
                       kind: str = "neumann", R: Optional[float] = None,
                       t_end: Optional[float] = None) -> float:
    """Run the pair (u01, f1) and (u02, f2) with f1 > f2 and u01 <= u02; return max (u1-u2)_+.

    ``kind='neumann'`` imposes outflow f on both ends, ``kind='dirichlet'``
    uses the boundary values (f|m|R)^(1/m).  Both runs share one fixed step.
    """
    f1, f2 = as_rate(f1), as_rate(f2)
    R = max(cfg.R_list) if R is None else R
    t_end = cfg.b if t_end is None else t_end
    u01 = cfg.u0 if u01 is None else u01
    u02 = cfg.u0 if u02 is None else u02
    grid = make_grid(R, cfg.h)
    s1 = make_initial(u01, cfg.epsilon, grid)
    s2 = make_initial(u02, cfg.epsilon, grid)
    if np.any(s1.u > s2.u):
        raise HypothesisViolated("initial data are not ordered u01 <= u02")
    ts = np.linspace(0.0, t_end, 201)
    if any(f1(t) < f2(t) for t in ts):
        raise HypothesisViolated("rates are not ordered f1 >= f2")
    dt = cfg.fixed_dt if cfg.fixed_dt is not None else cfg.dt_max
    ctl = SolverControls(h=cfg.h, dt0=dt, dt_max=dt, fixed_dt=True, output_times=tuple(cfg.times))
    if kind == "neumann":
        b1, b2 = BoundarySpec.neumann(f1, f1), BoundarySpec.neumann(f2, f2)
    else:
        b1 = BoundarySpec.dirichlet_rates(f1, f1, cfg.m, R)
        b2 = BoundarySpec.dirichlet_rates(f2, f2, cfg.m, R)
    t1 = solve(s1, b1, cfg.m, R, t_end, ctl)
    t2 = solve(s2, b2, cfg.m, R, t_end, ctl)
    return positive_excess(t1, t2)


# ------------------------------------------------------------ step-flux rates

@dataclass
class CompositionResult:
    composed_vs_direct: float
    envelope_excess: list  # max (v_k - v_{k+1})_+ for consecutive k
    envelope_T: list
    T: float


def _shift(traj: Trajectory, t0: float) -> list:
    return [PdeState(s.x, s.u, s.t + t0) for s in traj.states]


def composed_solution(cfg: ExperimentConfig, rate: Rate, t_end: float, R: float, times):
    """Restart the constant-rate Dirichlet solve on each step interval."""
    edges = [0.0] + [b for b in rate.breaks if b < t_end] + [t_end]
    state = _initial_state(cfg, R)
    states = [state]
    for lo, hi in zip(edges, edges[1:]):
        mu_i = rate(lo)
        local = [t - lo for t in times if lo < t < hi]
        bc = BoundarySpec.dirichlet_mu(mu_i, cfg.m, R)
        tr = solve(PdeState(state.x, state.u, 0.0), bc, cfg.m, R, hi - lo, cfg.controls(local))
        shifted = _shift(tr, lo)
        states.extend(shifted[1:])
        state = shifted[-1]
    return states


def dyadic_envelope(f: Rate, T: float, k: int) -> Rate:
    """f_k = sum_i sup_{I_i} f chi_{I_i} on the dyadic partition a_i = i T / 2^k."""
    n = 2 ** k
    a = [i * T / n for i in range(n + 1)]
    values = []
    for lo, hi in zip(a, a[1:]):
        ts = np.linspace(lo, hi, 65)
        values.append(max(f(t) for t in ts))
    values.append(values[-1])
    return Rate.steps(values, a[1:])


def step_flux_composition(cfg: ExperimentConfig, rate: Optional[Rate] = None,
                          envelope_rate: Optional[Rate] = None, ks=(2, 3, 4),
                          R: Optional[float] = None) -> CompositionResult:
    """(i) composed vs direct solve for a step rate; (ii) monotonicity of dyadic envelopes."""
    R = max(cfg.R_list) if R is None else R
    rate = Rate.steps([1.0, 2.0], [0.3]) if rate is None else rate
    times = list(cfg.times)
    t_end = cfg.b
    out_times = sorted(set(times) | set(b for b in rate.breaks if b < t_end))
    direct = run_dirichlet(cfg, R, t_end=t_end, f=rate, g=rate, output_times=out_times)
    composed = composed_solution(cfg, rate, t_end, R, out_times)
    xp = np.linspace(-cfg.L, cfg.L, cfg.n_probe)
    diff = 0.0
    for t in times:
        sc = min(composed, key=lambda s: abs(s.t - t))
        ud = np.interp(xp, direct.x, direct.at(t).u)
        uc = np.interp(xp, sc.x, sc.u)
        diff = max(diff, float(np.max(np.abs(ud - uc))))

    env = Rate([1.0, 1.0]) if envelope_rate is None else envelope_rate
    mass0 = cfg.u0.total_mass()
    T = predicted_extinction(mass0, env, env)
    rates = [dyadic_envelope(env, T, k) for k in ks]
    Tk = [predicted_extinction(mass0, r, r) for r in rates]
    # one fixed step that resolves the finest dyadic partition exactly
    n_fine = 2 ** max(ks)
    per_cell = max(1, int(math.ceil((T / n_fine) / cfg.dt_max)))
    dt = T / n_fine / per_cell
    t_stop = min(cfg.b, 0.95 * min(Tk))
    probe_t = [t for t in np.linspace(cfg.a, t_stop, cfg.n_times)]
    grid = make_grid(R, cfg.h)
    s0 = make_initial(cfg.u0, cfg.epsilon, grid)
    n_steps = int(math.floor(t_stop / dt + 1e-9))
    ctl = SolverControls(h=cfg.h, dt0=dt, dt_max=dt, fixed_dt=True)
    envs = []
    for r in rates:
        bc = BoundarySpec.dirichlet_rates(r, r, cfg.m, R)
        envs.append(solve(s0, bc, cfg.m, R, n_steps * dt, ctl))
    excess = []
    for lo_traj, hi_traj in zip(envs, envs[1:]):
        worst = 0.0
        for t in probe_t:
            a = np.interp(xp, lo_traj.x, lo_traj.at(t).u)
            b = np.interp(xp, hi_traj.x, hi_traj.at(t).u)
            worst = max(worst, float(np.max(a - b)))
        excess.append(max(worst, 0.0))
    return CompositionResult(composed_vs_direct=diff, envelope_excess=excess, envelope_T=Tk, T=T)


# ------------------------------------------------------------ flux at infinity

@dataclass
class FluxCheck:
    right_integral: float
    left_integral: float
    right_expected: float
    left_expected: float

    @property
    def deviations(self):
        def rel(a, b):
            return abs(a - b) / abs(b) if b != 0 else abs(a - b)
        return rel(self.right_integral, self.right_expected), rel(self.left_integral, self.left_expected)


def flux_at_infinity_check(traj: Trajectory, f, g, t1: float, t2: float,
                           station: float = 0.75) -> FluxCheck:
    """int_{t1}^{t2} u^{m-1} u_x at x = +-station*R against -int f and +int g."""
    f, g = as_rate(f), as_rate(g)
    if not (0 < t1 < t2 <= traj.times[-1] + 1e-12):
        raise ParameterOutOfRange("need 0 < t1 < t2 within the run")
    x = traj.x
    h = traj.states[0].h
    m = traj.m
    R = traj.states[0].R
    ir = int(np.argmin(np.abs(x - station * R)))
    il = x.size - 1 - ir  # mirror node, so even data give mirrored fluxes
    ts, fr, fl = [], [], []
    for s in traj.states:
        w = s.u ** m / m
        ts.append(s.t)
        fr.append((w[ir + 1] - w[ir - 1]) / (2 * h))
        fl.append((w[il + 1] - w[il - 1]) / (2 * h))
    ts = np.asarray(ts)
    sel = (ts >= t1 - 1e-12) & (ts <= t2 + 1e-12)
    right = float(np.trapezoid(np.asarray(fr)[sel], ts[sel]))
    left = float(np.trapezoid(np.asarray(fl)[sel], ts[sel]))
    return FluxCheck(right, left, -(f.integral(t2) - f.integral(t1)), g.integral(t2) - g.integral(t1))
