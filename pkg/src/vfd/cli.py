"""Command-line entry point ``vfd``.

Every subcommand writes its data files plus ``manifest.json`` (config hash,
tolerances used, pass flags) into ``--out``.  Exit status: 0 if all checks
pass, 1 if any check fails, 2 on configuration or I/O errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__, green, selfsim
from .config import SUBCOMMANDS, RunConfig, boundary_rates, experiment_config, load_config, parse_config
from .errors import ParseError, ValidationError, VFDError
from .experiments import (
    DEFAULT_TOLERANCES,
    ConvergenceReport,
    compare_dirichlet_neumann,
    expanding_domain,
    extinction_time,
    mass_law_check,
    predicted_extinction,
    run_dirichlet,
    run_neumann,
    run_to_extinction,
    slope_at_infinity,
)
from .solver import barrier_check, fmt


class _Run:
    """Collects files, tolerances and flags for the manifest."""

    def __init__(self, cfg: RunConfig, out: str):
        self.cfg = cfg
        self.out = out
        self.files: list = []
        self.flags: dict = {}
        self.tolerances: dict = {}
        self.values: dict = {}

    def path(self, name):
        p = os.path.join(self.out, name)
        self.files.append(name)
        return p

    def check(self, name, value, tol, ok):
        self.flags[name] = bool(ok)
        self.values[name] = value
        self.tolerances[name] = tol

    def tol(self, key, default=None):
        t = self.cfg.sections.get("tolerances", {})
        return t.get(key, DEFAULT_TOLERANCES.get(key, default))

    def manifest(self):
        failures = [k for k, v in self.flags.items() if not v]
        return {
            "command": self.cfg.command,
            "version": __version__,
            "config_hash": self.cfg.digest(),
            "config": self.cfg.sections,
            "tolerances": self.tolerances,
            "values": {k: _clean(v) for k, v in self.values.items()},
            "flags": self.flags,
            "failures": failures,
            "passed": not failures,
            "files": sorted(set(self.files)),
        }


def _clean(v):
    if isinstance(v, (np.floating, float)):
        return float(fmt(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_clean(x) for x in v]
    if isinstance(v, np.integer):
        return int(v)
    return v


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


# ---------------------------------------------------------------- commands

def cmd_profile(run: _Run, args):
    s = run.cfg.sections
    m, mu = s["model"]["m"], s["model"]["mu"]
    prof = s["profile"]
    if prof.get("eta") is not None:
        curve = selfsim.integrate_profile(m, prof["eta"], r_max=prof.get("r_max"), dr=prof.get("dr"))
    else:
        curve = selfsim.calibrated_profile(m, mu, dr=prof.get("dr"), r_max=prof.get("r_max"))
    curve.to_csv(run.path("profile.csv"))
    with open(run.path("profile.json"), "w") as fh:
        fh.write(curve.metadata_json())
    margin = curve.bound_margin()
    run.check("lemma_bound", margin, 0.0, margin > 0)
    w = curve.r_grid[1:] ** (-1.0 / m) * curve.f_values[1:]
    run.check("slope_monotone", float(np.min(np.diff(w))), 0.0, bool(np.all(np.diff(w) >= -1e-12 * w[1:])))
    if prof.get("eta") is None:
        tol = run.tol("profile_mass", 5e-3)
        err = abs(curve.mu - mu) / mu
        run.check("profile_mass", err, tol, err < tol)


def _green_test(x):
    return np.cos(x) * np.exp(-0.1 * x * x)


def averaged_kernel_defect(R, n=100, seed=20240101):
    """max |(G(r,y)+G(-r,y))/2 - G(0,y) - H(r,y)| over n fixed-seed triples (R', r, y)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        Rk = rng.uniform(0.5, R)
        r = rng.uniform(0.0, Rk)
        y = rng.uniform(-Rk, Rk)
        lhs = 0.5 * (green.kernel(Rk, r, y) + green.kernel(Rk, -r, y)) - green.kernel(Rk, 0.0, y)
        worst = max(worst, abs(float(lhs) - float(green.averaged_kernel(r, y))))
    return worst


def cmd_green_check(run: _Run, args):
    s = run.cfg.sections["green"]
    R = s["R"]
    errs, hs = [], []
    for n in s["n_list"]:
        op = green.GreenOperator.uniform(R, n)
        x = op.quad_nodes
        f = _green_test(x)
        g = green.apply_green(op, f)
        errs.append(float(np.max(np.abs(green.second_difference(g, op.h) - f[1:-1]))))
        hs.append(op.h)
        if args.dump_kernels:
            op.dump_csv(run.path(f"kernel_{n}.csv"))
    _write_csv(run.path("green.csv"), ["h", "d2_error"], zip(hs, errs))
    tol = run.tol("green", 1e-6)
    # D^2 of the trapezoid-applied kernel is exact up to rounding
    run.check("d2_reproduces_f", max(errs), tol, max(errs) < tol)
    op = green.GreenOperator.uniform(R, s["n_list"][-1])
    x = op.quad_nodes
    gs = green.apply_green_star(op, np.full(x.size, 2.0))
    e2 = float(np.max(np.abs(gs - x ** 2)))
    run.check("x2_identity", e2, 1e-6, e2 < 1e-6)
    worst = averaged_kernel_defect(R)
    run.check("averaged_kernel", worst, 1e-12, worst < 1e-12)


def cmd_solve(run: _Run, args, ecfg):
    s = run.cfg.sections
    d = s["domain"]
    R = d["R"]
    kind = s["boundary"]["type"]
    runner = run_dirichlet if kind == "dirichlet" else run_neumann
    traj = runner(ecfg, R, t_end=d["t_end"], output_times=ecfg.times)
    traj.write_csv(run.path("solution.csv"))
    traj.write_ledger_csv(run.path("ledger.csv"))
    ini = s["initial"]
    viol = barrier_check(traj, ini["mu0"], ini["R0"])
    run.check("barrier", viol, run.tol("barrier"), viol <= run.tol("barrier"))
    if kind == "neumann":
        ml = mass_law_check(traj, ecfg.f, ecfg.g, mass0=ecfg.u0.total_mass())
        key = "mass_constant" if not (ecfg.f.is_step or len(ecfg.f.coeffs) > 1
                                      or ecfg.g.is_step or len(ecfg.g.coeffs) > 1) else "mass_general"
        run.check("mass_law", ml.max_deviation, run.tol(key), ml.max_deviation < run.tol(key))
        _write_csv(run.path("mass.csv"), ["t", "mass", "predicted_mass", "deviation"],
                   zip(ml.t, ml.mass, ml.predicted, ml.deviation))


def cmd_converge(run: _Run, args, ecfg):
    rep = expanding_domain(ecfg, kind="dirichlet")
    traj = rep._trajectories[-1]
    frac = run.cfg.sections["window"]["slope_fraction"]
    sp = slope_at_infinity(traj, ecfg.times, ecfg.f, ecfg.g, fraction=frac, window_L=ecfg.L)
    rep.slope_table = sp.table()
    rep.extra["slope_dev_right"] = sp.dev_right
    rep.extra["slope_dev_left"] = sp.dev_left
    run.files.extend(os.path.basename(p) for p in rep.write(run.out))
    run.check("d_k_decreasing", rep.d_k, None, rep.flags["decreasing"])
    run.check("d_last", rep.d_k[-1], rep.tolerances["compact"], rep.flags["d_last_below_tol"])
    general = ecfg.f.is_step or ecfg.g.is_step or len(ecfg.f.coeffs) > 1 or len(ecfg.g.coeffs) > 1
    key = "mass_general" if general else "mass_constant"
    dev = rep.extra["mass_law_max_deviation"]
    run.check("mass_law", dev, run.tol(key), dev < run.tol(key))
    dev = max(sp.dev_right, sp.dev_left)
    run.check("slope", dev, run.tol("slope"), dev < run.tol("slope"))


def cmd_compare(run: _Run, args, ecfg):
    rep = compare_dirichlet_neumann(ecfg)
    run.files.extend(os.path.basename(p) for p in rep.write(run.out))
    run.check("difference_decreasing", rep.d_k, None, rep.flags["decreasing"])
    run.check("difference_last", rep.d_k[-1], rep.tolerances["equal"], rep.flags["last_below_tol"])


def cmd_extinction(run: _Run, args, ecfg):
    R = run.cfg.sections["domain"]["R"]
    traj = run_to_extinction(ecfg, R=R)
    T = predicted_extinction(ecfg.u0.total_mass(), ecfg.f, ecfg.g)
    est = extinction_time(traj)
    _write_csv(run.path("mass.csv"), ["t", "mass"], zip(traj.step_t, traj.step_mass))
    err = abs(est.T_est - T) / T
    with open(run.path("report.json"), "w") as fh:
        json.dump({"T_formula": T, "T_est": est.T_est, "relative_error": err,
                   "fit_window": list(est.t_fit)}, fh, indent=2, sort_keys=True)
    run.check("extinction_time", err, run.tol("extinction"), err < run.tol("extinction"))


# -------------------------------------------------------------------- main

def build_parser():
    p = argparse.ArgumentParser(prog="vfd", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=SUBCOMMANDS)
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--out", default="vfd-out", help="output directory")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--dump-kernels", action="store_true", help="green-check: write kernel CSVs")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--version", action="version", version=__version__)
    return p


def _fail(code, kind, message):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.command) if args.config else parse_config("", args.command)
    except OSError as e:
        return _fail(2, "io", str(e))
    except (ParseError, ValidationError) as e:
        return _fail(2, type(e).__name__, str(e))
    cfg.out = args.out
    try:
        os.makedirs(args.out, exist_ok=True)
        probe = os.path.join(args.out, ".vfd-write-test")
        with open(probe, "w"):
            pass
        os.remove(probe)
    except OSError as e:
        return _fail(2, "io", f"output directory not writable: {e}")
    run = _Run(cfg, args.out)
    try:
        if cfg.command == "profile":
            cmd_profile(run, args)
        elif cfg.command == "green-check":
            cmd_green_check(run, args)
        else:
            ecfg = experiment_config(cfg, threads=args.threads)
            {"solve": cmd_solve, "converge": cmd_converge, "compare": cmd_compare,
             "extinction": cmd_extinction}[cfg.command](run, args, ecfg)
        man = run.manifest()
        with open(os.path.join(args.out, "manifest.json"), "w") as fh:
            json.dump(man, fh, indent=2, sort_keys=True)
    except OSError as e:
        return _fail(2, "io", str(e))
    except VFDError as e:
        return _fail(1, type(e).__name__, str(e))
    if args.verbose or cfg.verbosity:
        for k, ok in run.flags.items():
            print(f"{'PASS' if ok else 'FAIL'} {k} = {run.values[k]}")
    return 0 if man["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
