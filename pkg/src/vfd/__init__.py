"""Finite-domain approximation of fast diffusion with flux at infinity.

Modules: :mod:`vfd.selfsim` (self-similar profiles), :mod:`vfd.green`
(Green function on [-R, R]), :mod:`vfd.solver` (implicit finite-volume
solver), :mod:`vfd.experiments` (expanding-domain and comparison studies),
:mod:`vfd.config` and :mod:`vfd.cli`.
"""
from . import errors, green, selfsim, solver  # noqa: F401

__version__ = "0.1.0"
