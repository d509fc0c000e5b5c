"""Scalar root finding: Newton steps kept inside a shrinking sign-change bracket."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import BracketError, SolverError


def _scalar(f):
    return lambda x: float(f(x))


@dataclass(frozen=True)
class RootResult:
    root: float
    residual: float
    bracket: tuple
    iterations: int


def expand_bracket(f: Callable[[float], float], lo: float, hi: float,
                   max_doublings: int = 60):
    """Double ``hi`` until f changes sign on [lo, hi].  Returns (lo, hi, f(lo), f(hi))."""
    f = _scalar(f)
    flo = f(lo)
    fhi = f(hi)
    n = 0
    while flo * fhi > 0:
        if n >= max_doublings:
            raise BracketError(
                f"no sign change on [{lo:.6g}, {hi:.6g}] after {n} doublings "
                f"(f(lo)={flo:.3g}, f(hi)={fhi:.3g})")
        lo, flo = hi, fhi
        hi *= 2.0
        fhi = f(hi)
        n += 1
    return lo, hi, flo, fhi


def newton_bisect(f: Callable[[float], float], lo: float, hi: float,
                  fprime: Optional[Callable[[float], float]] = None,
                  xtol: float = 1e-10, ftol: float = 1e-10, max_iter: int = 200) -> RootResult:
    """Find a root of f in [lo, hi], which must bracket a sign change.

    Newton is tried first; any step leaving the current bracket (or without a
    derivative) falls back to bisection.  Stops only when both the residual is
    below ``ftol`` and the bracket is narrower than ``xtol``, so the reported
    bracket certifies the root location.
    """
    f = _scalar(f)
    fprime = _scalar(fprime) if fprime is not None else None
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return RootResult(lo, 0.0, (lo, lo), 0)
    if fhi == 0.0:
        return RootResult(hi, 0.0, (hi, hi), 0)
    if flo * fhi > 0:
        raise BracketError(f"f({lo:.6g})={flo:.3g} and f({hi:.6g})={fhi:.3g} share a sign")
    x = 0.5 * (lo + hi)
    history = []
    for it in range(1, max_iter + 1):
        fx = f(x)
        history.append((x, fx, lo, hi))
        if fx == 0.0:
            return RootResult(x, 0.0, (x, x), it)
        if (fx < 0) == (flo < 0):
            lo, flo = x, fx
        else:
            hi, fhi = x, fx
        if abs(fx) <= ftol and hi - lo <= xtol:
            return RootResult(x, abs(fx), (lo, hi), it)
        step = None
        if fprime is not None:
            d = fprime(x)
            if d != 0 and math.isfinite(d):
                step = x - fx / d
        if step is None or not (lo < step < hi):
            step = 0.5 * (lo + hi)
        # a converged Newton iterate still needs a tight bracket: probe just past it
        if abs(step - x) < 0.25 * xtol and hi - lo > xtol:
            side = 0.25 * xtol
            probe = step + side if (step - lo) < (hi - step) else step - side
            step = min(max(probe, lo), hi)
            if not lo < step < hi:
                step = 0.5 * (lo + hi)
        x = step
    raise SolverError(f"root not certified after {max_iter} iterations", history)


def sign_changes(f: Callable, lo: float, hi: float, n: int = 1000) -> int:
    """Count sign changes of a vectorized f on an n-point uniform grid over [lo, hi]."""
    with np.errstate(all="ignore"):
        v = np.asarray(f(np.linspace(lo, hi, n)), dtype=float)
    v = v[np.isfinite(v) & (v != 0)]
    return int(np.count_nonzero(np.diff(np.sign(v))))
