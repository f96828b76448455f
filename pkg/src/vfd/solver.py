"""Implicit finite-difference solver for u_t = (u^m/m)_xx on (-R, R).

Backward Euler in time, standard 3-point second difference in space.  The
nonlinear system of each step is solved by damped Newton iteration on the
tridiagonal Jacobian.  The Newton unknown is the potential w = u^m/m rather
than u itself: every real w < 0 maps back to a positive u, and the map
w -> u is convex and increasing, which keeps the iteration monotone even when
u spans many decades.

Boundary nodes carry half control volumes.  For flux data this gives the
conservative condition

    (h/2) (u_0 - u_0^n) / dt = (w_1 - w_0) / h - g,

so the trapezoid mass changes by exactly dt * (flux_right - flux_left) per
step, which is what the mass ledger records.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .errors import (
    ExtinctionReached,
    NewtonDiverged,
    NonPositiveInitial,
    ParameterOutOfRange,
    PositivityLost,
)

DIRICHLET = "dirichlet"
NEUMANN = "neumann"


def check_exponent(m: float) -> None:
    if not (-1.0 < m < 0.0):
        raise ParameterOutOfRange(f"m must lie in (-1,0), got {m}")


def potential(u, m):
    """phi_m(u) = u^m / m (negative for u > 0)."""
    return np.power(u, m) / m


def from_potential(w, m):
    return np.power(m * np.asarray(w, dtype=float), 1.0 / m)


def dirichlet_value(rate, m, R):
    """Boundary value (rate*|m|*R)^(1/m) used by the Dirichlet problems."""
    return (rate * abs(m) * R) ** (1.0 / m)


def _const(c):
    c = float(c)
    return lambda t: c


@dataclass(frozen=True)
class BoundarySpec:
    """Boundary data on x = -R (left) and x = +R (right).

    Dirichlet: ``left(t)``/``right(t)`` are the positive boundary values.
    Neumann flux: ``left(t) = g(t)`` with (u^m/m)_x(-R,t) = g(t) and
    ``right(t) = f(t)`` with (u^m/m)_x(R,t) = -f(t); both are outflow rates.
    """

    kind: str
    left: Callable[[float], float]
    right: Callable[[float], float]

    def __post_init__(self):
        if self.kind not in (DIRICHLET, NEUMANN):
            raise ValueError(f"unknown boundary kind {self.kind!r}")

    @classmethod
    def dirichlet_rates(cls, f, g, m, R):
        """Problem u(R,t) = (f(t)|m|R)^(1/m), u(-R,t) = (g(t)|m|R)^(1/m)."""
        f = f if callable(f) else _const(f)
        g = g if callable(g) else _const(g)
        return cls(
            DIRICHLET,
            left=lambda t: dirichlet_value(g(t), m, R),
            right=lambda t: dirichlet_value(f(t), m, R),
        )

    @classmethod
    def dirichlet_mu(cls, mu, m, R):
        return cls.dirichlet_rates(mu, mu, m, R)

    @classmethod
    def neumann(cls, f, g):
        f = f if callable(f) else _const(f)
        g = g if callable(g) else _const(g)
        return cls(NEUMANN, left=g, right=f)


@dataclass(frozen=True)
class PdeState:
    x: np.ndarray
    u: np.ndarray
    t: float = 0.0

    @property
    def h(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def R(self) -> float:
        return float(self.x[-1])

    def mass(self) -> float:
        return trapezoid_mass(self.u, self.h)


@dataclass(frozen=True)
class StepReport:
    iterations: int
    residual: float
    floor_active: bool
    flux_left: float
    flux_right: float


@dataclass
class SolverControls:
    h: float = 0.1
    dt0: Optional[float] = None  # defaults to h
    dt_max: Optional[float] = None
    dt_min: float = 1e-12
    fixed_dt: bool = False
    growth: float = 1.2
    easy_iters: int = 5
    newton_tol: float = 1e-10
    max_iter: int = 60
    max_halvings: int = 8
    positivity_floor: Optional[float] = None  # defaults to 1e-12 * max(u0)
    extinction_fraction: float = 0.02
    epsilon: float = 0.0
    output_times: Sequence[float] = ()
    store_every: int = 1


@dataclass
class MassLedger:
    t: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    flux_left: list = field(default_factory=list)
    flux_right: list = field(default_factory=list)
    ab_residual: list = field(default_factory=list)
    newton_iters: list = field(default_factory=list)

    def append(self, t, mass, fl, fr, ab, iters):
        self.t.append(float(t))
        self.mass.append(float(mass))
        self.flux_left.append(float(fl))
        self.flux_right.append(float(fr))
        self.ab_residual.append(float(ab))
        self.newton_iters.append(int(iters))

    def as_arrays(self):
        return {k: np.asarray(getattr(self, k)) for k in
                ("t", "mass", "flux_left", "flux_right", "ab_residual", "newton_iters")}

    def __len__(self):
        return len(self.t)


@dataclass
class Trajectory:
    states: list
    ledger: MassLedger
    m: float
    bc: BoundarySpec
    extinct: bool = False
    # every accepted step, including unstored ones, for flux bookkeeping
    step_t: np.ndarray = None
    step_dt: np.ndarray = None
    step_flux_left: np.ndarray = None
    step_flux_right: np.ndarray = None
    step_mass: np.ndarray = None

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def x(self) -> np.ndarray:
        return self.states[0].x

    def at(self, t: float) -> PdeState:
        """Stored state nearest to time t."""
        times = self.times
        return self.states[int(np.argmin(np.abs(times - t)))]

    def u_matrix(self) -> np.ndarray:
        return np.vstack([s.u for s in self.states])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "u"])
            for s in self.states:
                for xi, ui in zip(s.x, s.u):
                    w.writerow([fmt(s.t), fmt(xi), fmt(ui)])

    def write_ledger_csv(self, path):
        L = self.ledger
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mass", "flux_left", "flux_right", "ab_residual", "newton_iters"])
            for row in zip(L.t, L.mass, L.flux_left, L.flux_right, L.ab_residual, L.newton_iters):
                w.writerow([fmt(v) for v in row[:5]] + [row[5]])


def fmt(v) -> str:
    return format(float(v), ".17g")


def trapezoid_mass(u, h) -> float:
    return float(h * (u.sum() - 0.5 * (u[0] + u[-1])))


def make_grid(R: float, h: float) -> np.ndarray:
    n = int(round(2 * R / h))
    if n < 4:
        raise ParameterOutOfRange("grid needs at least 4 cells")
    return np.linspace(-R, R, n + 1)


def make_initial(u0, epsilon: float, grid) -> PdeState:
    """Sample u0 on the grid and add the regularising shift epsilon."""
    x = np.asarray(grid, dtype=float)
    if epsilon < 0:
        raise ParameterOutOfRange("epsilon must be >= 0")
    vals = np.asarray(u0(x) if callable(u0) else u0, dtype=float)
    if vals.shape != x.shape:
        vals = np.broadcast_to(vals, x.shape).astype(float)
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise NonPositiveInitial("u0 must be finite and nonnegative")
    u = vals + epsilon
    if epsilon == 0 and u.min() <= 0:
        raise NonPositiveInitial("u0 has zeros on the grid; pass epsilon > 0")
    return PdeState(x=x, u=u, t=0.0)


def _boundary_fluxes(state_u, w, u_old, h, dt, bc, t_mid):
    """Scheme fluxes (u^m/m)_x at -R and +R, consistent to O(h^2)."""
    if bc.kind == NEUMANN:
        return float(bc.left(t_mid)), -float(bc.right(t_mid))
    fl = (w[1] - w[0]) / h - 0.5 * h * (state_u[0] - u_old[0]) / dt
    fr = (w[-1] - w[-2]) / h + 0.5 * h * (state_u[-1] - u_old[-1]) / dt
    return float(fl), float(fr)


def _residual(w, u, u_old, c, h, dt, bc, t_mid, dirichlet):
    """Backward-Euler residual in u units; Dirichlet nodes excluded."""
    r = np.empty_like(u)
    r[1:-1] = u[1:-1] - u_old[1:-1] - c * (w[:-2] - 2 * w[1:-1] + w[2:])
    if dirichlet:
        r[0] = r[-1] = 0.0
    else:
        g = bc.left(t_mid)
        f = bc.right(t_mid)
        r[0] = u[0] - u_old[0] - 2 * c * (w[1] - w[0]) + 2 * dt / h * g
        r[-1] = u[-1] - u_old[-1] - 2 * c * (w[-2] - w[-1]) + 2 * dt / h * f
    return r


def step(state: PdeState, dt: float, bc: BoundarySpec, m: float,
         controls: Optional[SolverControls] = None, floor: Optional[float] = None):
    """Advance one backward-Euler step; returns (new_state, StepReport)."""
    if dt <= 0:
        raise ParameterOutOfRange("dt must be positive")
    ctl = controls or SolverControls()
    h = state.h
    c = dt / h ** 2
    t_new = state.t + dt
    t_mid = state.t + 0.5 * dt
    u_old = state.u
    n = u_old.size
    dirichlet = bc.kind == DIRICHLET
    if floor is None:
        floor = ctl.positivity_floor if ctl.positivity_floor is not None else 1e-12 * u_old.max()

    w = potential(u_old, m)
    if dirichlet:
        w[0] = potential(bc.left(t_new), m)
        w[-1] = potential(bc.right(t_new), m)
        u_cap = max(u_old.max(), bc.left(t_new), bc.right(t_new))
    else:
        u_cap = u_old.max()
    w_hi = potential(10.0 * u_cap, m)
    w_lo = potential(floor, m)

    u = from_potential(w, m)
    res = _residual(w, u, u_old, c, h, dt, bc, t_mid, dirichlet)
    rnorm = np.abs(res).max()
    lo = 1 if dirichlet else 0
    hi = n - 1 if dirichlet else n
    ab = np.zeros((3, hi - lo))
    it = 0
    while True:
        scale = u.max() + 4 * c * np.abs(w).max()
        if rnorm < ctl.newton_tol or rnorm < 64 * np.finfo(float).eps * scale:
            break
        if it >= ctl.max_iter:
            raise NewtonDiverged(f"no convergence after {it} iterations (residual {rnorm:.3e})")
        it += 1
        # tridiagonal Jacobian d res / d w, banded storage
        diag = u ** (1.0 - m) + 2 * c
        ab[:] = 0.0
        ab[1] = diag[lo:hi]
        ab[0, 1:] = -c
        ab[2, :-1] = -c
        if not dirichlet:
            ab[0, 1] = -2 * c
            ab[2, -2] = -2 * c
        delta = solve_banded((1, 1), ab, -res[lo:hi])
        lam = 1.0
        for _ in range(ctl.max_halvings + 1):
            w_try = w.copy()
            w_try[lo:hi] = np.clip(w[lo:hi] + lam * delta, w_lo, w_hi)
            u_try = from_potential(w_try, m)
            r_try = _residual(w_try, u_try, u_old, c, h, dt, bc, t_mid, dirichlet)
            rn_try = np.abs(r_try).max()
            if rn_try < rnorm or rn_try < ctl.newton_tol:
                break
            lam *= 0.5
        else:
            raise NewtonDiverged(f"damping exhausted at iteration {it} (residual {rnorm:.3e})")
        w, u, res, rnorm = w_try, u_try, r_try, rn_try

    floor_active = bool(np.any(w[lo:hi] <= w_lo))
    if floor_active:
        raise PositivityLost(f"positivity floor {floor:.3e} active at convergence")
    fl, fr = _boundary_fluxes(u, w, u_old, h, dt, bc, t_mid)
    new = PdeState(x=state.x, u=u, t=t_new)
    return new, StepReport(it, float(rnorm), floor_active, fl, fr)


def aronson_benilan_residual(u_new, u_old, dt, t_new, m) -> float:
    """max over interior nodes of (u_t - u/((1-m)t))_+ with backward-difference u_t."""
    if t_new <= 0:
        return 0.0
    ut = (u_new[1:-1] - u_old[1:-1]) / dt
    excess = ut - u_new[1:-1] / ((1.0 - m) * t_new)
    return float(max(excess.max(), 0.0))


def solve(u0, bc: BoundarySpec, m: float, R: float, t_end: float,
          controls: Optional[SolverControls] = None,
          raise_on_extinction: bool = False) -> Trajectory:
    """March from t=0 to t_end with adaptive backward-Euler steps.

    ``u0`` may be a callable, an array of node values, or a PdeState.
    Output times in ``controls.output_times`` are hit exactly and always stored.
    Stops early (``traj.extinct``) once the mass drops below
    ``extinction_fraction`` times the initial mass.
    """
    check_exponent(m)
    ctl = controls or SolverControls()
    if isinstance(u0, PdeState):
        state = u0
        if not math.isclose(state.R, R):
            raise ParameterOutOfRange("initial state half-width differs from R")
    else:
        state = make_initial(u0, ctl.epsilon, make_grid(R, ctl.h))
    h = state.h
    dt = ctl.dt0 if ctl.dt0 is not None else h
    dt_max = ctl.dt_max if ctl.dt_max is not None else max(dt, 10 * h)
    floor = ctl.positivity_floor if ctl.positivity_floor is not None else 1e-12 * state.u.max()
    stops = sorted(float(t) for t in ctl.output_times if 0 < t < t_end) + [float(t_end)]

    ledger = MassLedger()
    mass0 = state.mass()
    ledger.append(0.0, mass0, np.nan, np.nan, 0.0, 0)
    states = [state]
    st_t, st_dt, st_fl, st_fr, st_mass = [], [], [], [], []
    extinct = False
    k = 0
    stop_i = 0
    eps_t = 1e-12 * max(1.0, t_end)
    while state.t < t_end - eps_t:
        target = stops[stop_i]
        dt_try = min(dt, target - state.t)
        hit = dt_try >= target - state.t - eps_t
        try:
            new, rep = step(state, dt_try, bc, m, ctl, floor=floor)
        except (NewtonDiverged, PositivityLost):
            if ctl.fixed_dt and dt_try <= ctl.dt_min:
                raise
            dt = dt_try / 2
            if dt < ctl.dt_min:
                raise
            continue
        if hit:
            new = PdeState(new.x, new.u, target)
        k += 1
        mass = new.mass()
        ab = aronson_benilan_residual(new.u, state.u, dt_try, new.t, m)
        st_t.append(new.t)
        st_dt.append(dt_try)
        st_fl.append(rep.flux_left)
        st_fr.append(rep.flux_right)
        st_mass.append(mass)
        if hit or k % ctl.store_every == 0:
            states.append(new)
            ledger.append(new.t, mass, rep.flux_left, rep.flux_right, ab, rep.iterations)
        state = new
        if hit:
            stop_i += 1
        if not ctl.fixed_dt and rep.iterations <= ctl.easy_iters:
            dt = min(dt * ctl.growth, dt_max)
        elif ctl.fixed_dt:
            dt = ctl.dt0 if ctl.dt0 is not None else h
        if mass < ctl.extinction_fraction * mass0:
            extinct = True
            if states[-1] is not state:
                states.append(state)
                ledger.append(state.t, mass, rep.flux_left, rep.flux_right, ab, rep.iterations)
            break
    traj = Trajectory(
        states=states, ledger=ledger, m=m, bc=bc, extinct=extinct,
        step_t=np.array(st_t), step_dt=np.array(st_dt),
        step_flux_left=np.array(st_fl), step_flux_right=np.array(st_fr),
        step_mass=np.array(st_mass),
    )
    if extinct and raise_on_extinction:
        raise ExtinctionReached(f"mass fell below {ctl.extinction_fraction} of initial", traj)
    return traj


def barrier(x, mu0, R0, m):
    """Stationary supersolution (mu0*|m|*(|x|-R0))^(1/m) for |x| > R0 (inf inside)."""
    d = np.abs(np.asarray(x, dtype=float)) - R0
    out = np.full(d.shape, np.inf)
    pos = d > 0
    out[pos] = (mu0 * abs(m) * d[pos]) ** (1.0 / m)
    return out


def barrier_check(traj: Trajectory, mu0: float, R0: float) -> float:
    """Largest u - barrier over nodes with R0 < |x| <= R and all stored times."""
    x = traj.x
    sel = np.abs(x) > R0
    phi = barrier(x[sel], mu0, R0, traj.m)
    worst = -np.inf
    for s in traj.states:
        worst = max(worst, float(np.max(s.u[sel] - phi)))
    return worst
