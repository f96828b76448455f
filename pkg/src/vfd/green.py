"""Green function of d^2/dx^2 on [-R, R] with zero boundary values.

    G_R(x, y) = -(R+y)(R-x)/(2R)   for y <= x
              = -(R-y)(R+x)/(2R)   for x <= y

Operators are applied by trapezoid quadrature on a uniform node set that
contains every evaluation point, so the kink of the kernel at y = x always
falls on a node.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DecayHypothesisViolated, GridMismatch, OutOfInterval


def kernel(R, x, y):
    """Vectorised G_R(x, y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    tol = 1e-12 * R
    if np.any(np.abs(x) > R + tol) or np.any(np.abs(y) > R + tol):
        raise OutOfInterval(f"arguments must lie in [-{R}, {R}]")
    lo = np.minimum(x, y)
    hi = np.maximum(x, y)
    return -(R + lo) * (R - hi) / (2.0 * R)


def averaged_kernel(r, y):
    """H(r, y) = (r - |y|)/2 for |y| < r, else 0."""
    y = np.abs(np.asarray(y, dtype=float))
    return np.where(y < r, 0.5 * (r - y), 0.0)


def _cumtrapz(v, h):
    out = np.zeros_like(v)
    out[1:] = np.cumsum(0.5 * h * (v[1:] + v[:-1]))
    return out


@dataclass(frozen=True)
class GreenOperator:
    half_width: float
    quad_nodes: np.ndarray
    quad_weights: np.ndarray

    @classmethod
    def uniform(cls, R: float, n: int) -> "GreenOperator":
        """n cells on [-R, R]; n is rounded up to even so that x = 0 is a node."""
        n = int(n) + (int(n) % 2)
        x = np.linspace(-R, R, n + 1)
        h = x[1] - x[0]
        w = np.full(x.size, h)
        w[0] = w[-1] = 0.5 * h
        return cls(float(R), x, w)

    @property
    def h(self) -> float:
        return float(self.quad_nodes[1] - self.quad_nodes[0])

    @property
    def center(self) -> int:
        return self.quad_nodes.size // 2

    def matrix(self) -> np.ndarray:
        x = self.quad_nodes
        return kernel(self.half_width, x[:, None], x[None, :])

    def _check(self, f):
        f = np.asarray(f, dtype=float)
        if f.shape != self.quad_nodes.shape:
            raise GridMismatch(f"expected {self.quad_nodes.size} samples, got {f.shape}")
        return f

    def dump_csv(self, path) -> None:
        x = self.quad_nodes
        G = self.matrix()
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["x", "y", "G"])
            for i, xi in enumerate(x):
                for j, yj in enumerate(x):
                    out.writerow([format(xi, ".17g"), format(yj, ".17g"), format(G[i, j], ".17g")])


def apply_green(op: GreenOperator, f_samples) -> np.ndarray:
    """G_R(f) at the nodes."""
    f = op._check(f_samples)
    return op.matrix() @ (op.quad_weights * f)


def apply_green_star(op: GreenOperator, f_samples) -> np.ndarray:
    """G_R*(f)(x) = G_R(f)(x) - G_R(f)(0)."""
    g = apply_green(op, f_samples)
    return g - g[op.center]


def second_difference(values, h) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    return (v[:-2] - 2 * v[1:-1] + v[2:]) / h ** 2


@dataclass(frozen=True)
class Decomposition:
    I1: np.ndarray
    I2: np.ndarray
    I3: np.ndarray
    decay_ok: Optional[bool] = None

    @property
    def total(self) -> np.ndarray:
        return self.I1 + self.I2 + self.I3


def asymptotic_decomposition(op: GreenOperator, f_samples, m: Optional[float] = None,
                             C: Optional[float] = None, R0: Optional[float] = None) -> Decomposition:
    """Split G_R*(f) = I1 + I2 + I3 at every node.

    I1 = -int_0^x y f,  I2 = -(x/2)(int_x^R f - int_{-R}^x f),
    I3 = (x/(2R)) int_{-R}^R y f.
    When m, C and R0 are given, the decay hypothesis |f| <= C|x|^(1/m) on
    |x| >= R0 is checked and a DecayHypothesisViolated warning issued if it fails.
    """
    f = op._check(f_samples)
    x = op.quad_nodes
    h = op.h
    R = op.half_width
    c = op.center
    yf = x * f
    cum_yf = _cumtrapz(yf, h)
    cum_f = _cumtrapz(f, h)
    total_f = cum_f[-1]
    I1 = -(cum_yf - cum_yf[c])
    I2 = -(x / 2.0) * ((total_f - cum_f) - cum_f)
    I3 = (x / (2.0 * R)) * cum_yf[-1]
    decay_ok = None
    if m is not None and C is not None and R0 is not None:
        far = np.abs(x) >= R0
        decay_ok = bool(np.all(np.abs(f[far]) <= C * np.abs(x[far]) ** (1.0 / m) * (1 + 1e-12)))
        if not decay_ok:
            warnings.warn("f violates |f(x)| <= C|x|^(1/m) beyond R0", DecayHypothesisViolated)
    return Decomposition(I1=I1, I2=I2, I3=I3, decay_ok=decay_ok)
