"""Flat ``key = value`` configuration files.

Grammar::

    # comment
    command = "converge"
    [model]
    m = -0.5
    mu = 1.0
    [domain]
    R_list = [10, 20, 40]

Values are numbers, double-quoted strings, ``true``/``false`` or one-line
arrays of those.  Keys before the first section header belong to the
top-level section ``""``.  Unknown sections and keys are errors.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from typing import Any, Optional

from .errors import ParseError, ValidationError

SUBCOMMANDS = ("profile", "green-check", "solve", "converge", "compare", "extinction")

_NUMBER = re.compile(r"[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?")
_KEY = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _positive(v):
    return _num(v) and v > 0


def _nonneg(v):
    return _num(v) and v >= 0


def _posint(v):
    return isinstance(v, int) and not isinstance(v, bool) and v > 0


def _exponent(v):
    return _num(v) and -1 < v < 0


def _numlist(v):
    return isinstance(v, list) and len(v) > 0 and all(_num(x) for x in v)


def _string(v):
    return isinstance(v, str)


# section -> key -> (check, message, default)
SCHEMA: dict = {
    "": {
        "command": (lambda v: v in SUBCOMMANDS, "must be one of " + ", ".join(SUBCOMMANDS), None),
        "verbosity": (lambda v: isinstance(v, int) and 0 <= v <= 2, "must be 0, 1 or 2", 0),
    },
    "model": {
        "m": (_exponent, "must lie in (-1,0)", -0.5),
        "mu": (_positive, "must be > 0", 1.0),
    },
    "profile": {
        "eta": (_positive, "must be > 0", None),
        "dr": (_positive, "must be > 0", None),
        "r_max": (_positive, "must be > 0", None),
        "T": (_positive, "must be > 0", 1.0),
    },
    "green": {
        "R": (_positive, "must be > 0", 5.0),
        "n_list": (lambda v: isinstance(v, list) and len(v) >= 2 and all(_posint(x) for x in v)
                   and all(b > a for a, b in zip(v, v[1:])),
                   "must be an increasing list of positive integers", [100, 200, 400]),
    },
    "initial": {
        "kind": (lambda v: v in ("bump", "selfsimilar"), "must be \"bump\" or \"selfsimilar\"", "bump"),
        "mass": (_positive, "must be > 0", 2.0),
        "width": (_positive, "must be > 0", 1.0),
        "mu0": (_positive, "must be > 0", 1.0),
        "R0": (lambda v: _num(v) and v > 1, "must be > 1", 1.5),
        "ss_mu": (_positive, "must be > 0", 1.0),
        "ss_T": (_positive, "must be > 0", 1.0),
    },
    "boundary": {
        "type": (lambda v: v in ("dirichlet", "neumann"), "must be \"dirichlet\" or \"neumann\"", "neumann"),
        "f": (lambda v: _nonneg(v) or (_numlist(v) and all(x >= 0 for x in v[:1])),
              "must be a number >= 0 or a list of polynomial coefficients", None),
        "g": (lambda v: _nonneg(v) or (_numlist(v) and all(x >= 0 for x in v[:1])),
              "must be a number >= 0 or a list of polynomial coefficients", None),
        "f_values": (lambda v: _numlist(v) and all(x >= 0 for x in v), "must be a list of numbers >= 0", None),
        "f_breaks": (lambda v: isinstance(v, list) and all(_positive(x) for x in v)
                     and all(b > a for a, b in zip(v, v[1:])), "must be an increasing list of times > 0", None),
        "g_values": (lambda v: _numlist(v) and all(x >= 0 for x in v), "must be a list of numbers >= 0", None),
        "g_breaks": (lambda v: isinstance(v, list) and all(_positive(x) for x in v)
                     and all(b > a for a, b in zip(v, v[1:])), "must be an increasing list of times > 0", None),
    },
    "domain": {
        "R": (_positive, "must be > 0", 40.0),
        "R_list": (lambda v: _numlist(v) and all(x > 0 for x in v),
                   "must be a list of numbers > 0", [10.0, 20.0, 40.0]),
        "h": (_positive, "must be > 0", 0.1),
        "dt0": (_positive, "must be > 0", 1e-5),
        "dt_max": (_positive, "must be > 0", 2e-3),
        "fixed_dt": (_positive, "must be > 0", None),
        "epsilon": (_nonneg, "must be >= 0", 1e-6),
        "t_end": (_positive, "must be > 0", 0.5),
    },
    "window": {
        "L": (_positive, "must be > 0", 2.0),
        "a": (_positive, "must be > 0", 0.1),
        "b": (_positive, "must be > 0", 0.5),
        "n_times": (_posint, "must be a positive integer", 5),
        "n_probe": (lambda v: isinstance(v, int) and v >= 2, "must be an integer >= 2", 41),
        "slope_fraction": (lambda v: _num(v) and 0 < v < 1, "must lie in (0,1)", 0.75),
    },
    "tolerances": {k: (_positive, "must be > 0", None) for k in (
        "compact", "mass_constant", "mass_general", "extinction", "extinction_ratio",
        "slope", "equal", "order", "barrier", "flux", "profile_mass", "green")},
}


@dataclass
class RunConfig:
    command: str
    sections: dict
    out: Optional[str] = None
    verbosity: int = 0
    source: str = ""

    def get(self, section: str, key: str):
        return self.sections.get(section, {}).get(key)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form of the validated values."""
        blob = json.dumps({"command": self.command, "sections": self.sections},
                          sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# ------------------------------------------------------------------ parsing

class _Cursor:
    def __init__(self, text, line):
        self.text = text
        self.pos = 0
        self.line = line

    def error(self, msg):
        raise ParseError(msg, self.line, self.pos + 1)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos] in " \t":
            self.pos += 1

    def at_end(self):
        self.skip_ws()
        return self.pos >= len(self.text) or self.text[self.pos] == "#"

    def value(self):
        self.skip_ws()
        if self.pos >= len(self.text):
            self.error("expected a value")
        c = self.text[self.pos]
        if c == '"':
            end = self.text.find('"', self.pos + 1)
            if end < 0:
                self.error("unterminated string")
            s = self.text[self.pos + 1:end]
            self.pos = end + 1
            return s
        if c == "[":
            self.pos += 1
            items = []
            self.skip_ws()
            if self.pos < len(self.text) and self.text[self.pos] == "]":
                self.pos += 1
                return items
            while True:
                items.append(self.value())
                self.skip_ws()
                if self.pos >= len(self.text):
                    self.error("unterminated array")
                if self.text[self.pos] == ",":
                    self.pos += 1
                    continue
                if self.text[self.pos] == "]":
                    self.pos += 1
                    return items
                self.error("expected ',' or ']'")
        for word, val in (("true", True), ("false", False)):
            if self.text.startswith(word, self.pos):
                self.pos += len(word)
                return val
        mt = _NUMBER.match(self.text, self.pos)
        if mt:
            tok = mt.group(0)
            self.pos = mt.end()
            if mt.group(2) is None and mt.group(3) is None and "." not in tok:
                return int(tok)
            val = float(tok)
            if not math.isfinite(val):
                self.error("number out of range")
            return val
        self.error(f"unexpected character {c!r}")


def parse_text(text: str) -> dict:
    """Parse into {section: {key: value}} without schema checks."""
    out: dict = {"": {}}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        indent = len(raw) - len(raw.lstrip())
        if stripped.startswith("["):
            close = stripped.find("]")
            if close < 0:
                raise ParseError("unterminated section header", lineno, indent + 1)
            name = stripped[1:close].strip()
            if not _KEY.fullmatch(name):
                raise ParseError(f"bad section name {name!r}", lineno, indent + 2)
            rest = stripped[close + 1:].strip()
            if rest and not rest.startswith("#"):
                raise ParseError("trailing characters after section header", lineno,
                                 indent + close + 2)
            if name in out and out[name]:
                raise ParseError(f"duplicate section [{name}]", lineno, indent + 1)
            section = name
            out.setdefault(section, {})
            continue
        mk = _KEY.match(raw, indent)
        if not mk:
            raise ParseError("expected a key", lineno, indent + 1)
        key = mk.group(0)
        cur = _Cursor(raw, lineno)
        cur.pos = mk.end()
        cur.skip_ws()
        if cur.pos >= len(raw) or raw[cur.pos] != "=":
            cur.error("expected '='")
        cur.pos += 1
        val = cur.value()
        if not cur.at_end():
            cur.error("trailing characters after value")
        if key in out[section]:
            raise ParseError(f"duplicate key {key!r}", lineno, indent + 1)
        out[section][key] = val
    return out


def _qualified(section, key):
    return f"{section}.{key}" if section else key


def validate(raw: dict, command: Optional[str] = None) -> RunConfig:
    """Check names and ranges against SCHEMA and fill defaults."""
    sections: dict = {}
    for sec, body in raw.items():
        if sec not in SCHEMA:
            raise ValidationError(f"[{sec}]", "unknown section")
        for key, val in body.items():
            if key not in SCHEMA[sec]:
                raise ValidationError(_qualified(sec, key), "unknown key")
            check, msg, _ = SCHEMA[sec][key]
            if isinstance(val, int) and not isinstance(val, bool) and check(float(val)) and not check(val):
                val = float(val)
            if not check(val):
                raise ValidationError(key if sec in ("", "model") else _qualified(sec, key), msg)
            sections.setdefault(sec, {})[key] = val
    for sec, keys in SCHEMA.items():
        for key, (_, _, default) in keys.items():
            if default is not None:
                sections.setdefault(sec, {}).setdefault(key, default)
    cmd = command or sections[""].get("command")
    if cmd is None:
        raise ValidationError("command", "no subcommand given")
    if cmd not in SUBCOMMANDS:
        raise ValidationError("command", SCHEMA[""]["command"][1])
    sections[""]["command"] = cmd
    R_list = sections["domain"]["R_list"]
    if any(b <= a for a, b in zip(R_list, R_list[1:])):
        raise ValidationError("domain.R_list", "must be strictly increasing")
    win = sections["window"]
    if not win["a"] < win["b"]:
        raise ValidationError("window.b", "must exceed window.a")
    if cmd in ("converge", "compare") and win["L"] >= min(R_list):
        raise ValidationError("window.L", "must be smaller than the smallest R")
    bnd = sections["boundary"]
    for side in ("f", "g"):
        vals, brks = bnd.get(side + "_values"), bnd.get(side + "_breaks")
        if (vals is None) != (brks is None):
            raise ValidationError(f"boundary.{side}_values", f"needs {side}_breaks as well")
        if vals is not None:
            if side in bnd:
                raise ValidationError(f"boundary.{side}", f"conflicts with {side}_values")
            if len(vals) != len(brks) + 1:
                raise ValidationError(f"boundary.{side}_values", f"must have len({side}_breaks)+1 entries")
    return RunConfig(command=cmd, sections=sections, verbosity=sections[""]["verbosity"])


def parse_config(text: str, command: Optional[str] = None) -> RunConfig:
    cfg = validate(parse_text(text), command)
    cfg.source = text
    return cfg


def load_config(path, command: Optional[str] = None) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read(), command)


# ------------------------------------------------------------ conversions

def boundary_rates(cfg: RunConfig):
    """(f, g) as experiments.Rate objects; each defaults to model.mu."""
    from .experiments import Rate
    bnd = cfg.sections["boundary"]
    mu = cfg.sections["model"]["mu"]
    out = []
    for side in ("f", "g"):
        if side + "_values" in bnd:
            out.append(Rate.steps(bnd[side + "_values"], bnd[side + "_breaks"]))
        elif side in bnd:
            out.append(Rate(bnd[side]))
        else:
            out.append(Rate(mu))
    return tuple(out)


def experiment_config(cfg: RunConfig, threads: int = 1):
    from .experiments import ExperimentConfig, InitialDatum
    s = cfg.sections
    f, g = boundary_rates(cfg)
    ini = s["initial"]
    u0 = InitialDatum(kind=ini["kind"], mass=ini["mass"], width=ini["width"], mu0=ini["mu0"],
                      R0=ini["R0"], ss_mu=ini["ss_mu"], ss_T=ini["ss_T"], m=s["model"]["m"])
    d, w = s["domain"], s["window"]
    tol = {k: v for k, v in s.get("tolerances", {}).items()}
    return ExperimentConfig(
        m=s["model"]["m"], u0=u0, mu=s["model"]["mu"], f=f, g=g, R_list=tuple(d["R_list"]),
        L=w["L"], a=w["a"], b=w["b"], n_times=w["n_times"], n_probe=w["n_probe"],
        h=d["h"], dt0=d["dt0"], dt_max=d["dt_max"], epsilon=d["epsilon"],
        fixed_dt=d.get("fixed_dt"), threads=threads, tolerances=tol,
    )
