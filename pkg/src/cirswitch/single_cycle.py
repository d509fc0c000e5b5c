"""Optimal starting-stopping problem: one entry, one exit.

Stopping: V(y) = A F(y) below b*, y - c_s above, where b* solves
F(b) = (b - c_s) F'(b) and A = (b* - c_s)/F(b*).

Starting: if A > c_b, J(y) = V(y) - (y + c_b) up to d*, B G(y) above, where
d* solves G(d)(V'(d) - 1) = G'(d)(V(d) - d - c_b).  Otherwise J = 0.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import cir
from .cir import CirParams, Costs
from .errors import BracketError, UniquenessWarning
from .roots import RootResult, expand_bracket, newton_bisect, sign_changes

EPS = 1e-10


@dataclass(frozen=True)
class SingleCycleSolution:
    params: CirParams
    costs: Costs
    b_star: float
    coef_A: float
    d_star: Optional[float] = None
    coef_B: Optional[float] = None
    b_residual: float = 0.0
    d_residual: Optional[float] = None

    @property
    def trivial_start(self) -> bool:
        return self.d_star is None


def _stop_equation(params, costs):
    cs = costs.c_s

    def f(b):
        return cir.f_of(params, b) / cir.f_prime(params, b) - (b - cs)

    def df(b):
        fp = cir.f_prime(params, b)
        return -cir.f_of(params, b) * cir.f_second(params, b) / fp ** 2

    return f, df


def b_star_root(params: CirParams, costs: Costs) -> RootResult:
    """Solve the smooth-fit equation for b* with a certified bracket.

    The equation is divided through by F'(b) > 0, which keeps the residual
    O(1) however large F grows.
    """
    f, df = _stop_equation(params, costs)
    lo = max(costs.c_s, cir.critical_levels(params, costs).y_s) + EPS
    lo, hi, _, _ = expand_bracket(f, lo, max(params.theta, 2.0 * lo))
    res = newton_bisect(f, lo, hi, df)
    _audit(f, max(costs.c_s, cir.critical_levels(params, costs).y_s) + EPS, hi, "b*")
    return res


def solve_b_star(params: CirParams, costs: Costs) -> float:
    return b_star_root(params, costs).root


def _audit(f, lo, hi, label):
    n = sign_changes(f, lo, hi, 1000)
    if n > 1:
        warnings.warn(f"{label}: {n} sign changes on [{lo:.6g}, {hi:.6g}]", UniquenessWarning,
                      stacklevel=3)


def _start_equation(params, costs, A):
    cb = costs.c_b

    def f(d):
        g = cir.g_of(params, d)
        gp = cir.g_prime(params, d)
        return A * cir.f_prime(params, d) - 1.0 - gp / g * (A * cir.f_of(params, d) - d - cb)

    def df(d):
        g = cir.g_of(params, d)
        gp = cir.g_prime(params, d)
        gpp = cir.g_second(params, d)
        h = A * cir.f_of(params, d) - d - cb
        hp = A * cir.f_prime(params, d) - 1.0
        return A * cir.f_second(params, d) - (gpp / g - (gp / g) ** 2) * h - gp / g * hp

    return f, df


def solve_d_star(params: CirParams, costs: Costs, v: SingleCycleSolution) -> Optional[float]:
    """Entry threshold d*, or None when entering is never worthwhile (A <= c_b)."""
    r = _d_star_root(params, costs, v)
    return None if r is None else r.root


def _d_star_root(params, costs, v):
    if v.coef_A <= costs.c_b:
        return None
    f, df = _start_equation(params, costs, v.coef_A)
    hi = v.b_star - EPS
    lo = _entry_lower_bracket(f, hi)
    res = newton_bisect(f, lo, hi, df)
    _audit(f, lo, hi, "d*")
    return res


def _entry_lower_bracket(f, hi):
    """Halve down from hi to EPS until the entry residual turns positive.

    Near 0 the residual grows like -G'/G, so the sign change is usually met
    long before G leaves the float range at EPS (large 2 mu theta / sigma^2).
    """
    lo = 0.5 * hi
    while lo > EPS:
        try:
            if f(lo) > 0:
                return lo
        except OverflowError:
            break
        lo *= 0.5
    lo = EPS
    if f(lo) <= 0:
        raise BracketError(
            f"entry residual has no sign change on [{EPS:g}, {hi:.6g}]: the entry level "
            f"is below {EPS:g} (G'/G diverges too slowly at 0 for these parameters)")
    return lo


def solve_single_cycle(params: CirParams, costs: Costs) -> SingleCycleSolution:
    br = b_star_root(params, costs)
    b = br.root
    A = float((b - costs.c_s) / cir.f_of(params, b))
    partial = SingleCycleSolution(params, costs, b, A, b_residual=br.residual)
    dr = _d_star_root(params, costs, partial)
    if dr is None:
        return partial
    d = dr.root
    B = float((A * cir.f_of(params, d) - d - costs.c_b) / cir.g_of(params, d))
    return SingleCycleSolution(params, costs, b, A, d, B, br.residual, dr.residual)


def _piecewise(y, mask_left, left, right):
    y = np.asarray(y, dtype=float)
    out = np.empty(y.shape)
    m = np.asarray(mask_left)
    if m.any():
        out[m] = left(y[m])
    if (~m).any():
        out[~m] = right(y[~m])
    return float(out) if out.shape == () else out


def value_v(sol: SingleCycleSolution, y):
    """Stopping value V(y)."""
    p, cs = sol.params, sol.costs.c_s
    y = np.asarray(y, dtype=float)
    return _piecewise(y, y < sol.b_star, lambda x: sol.coef_A * cir.f_of(p, x), lambda x: x - cs)


def value_v_prime(sol: SingleCycleSolution, y):
    p = sol.params
    y = np.asarray(y, dtype=float)
    return _piecewise(y, y < sol.b_star, lambda x: sol.coef_A * cir.f_prime(p, x),
                      lambda x: np.ones_like(x))


def value_j(sol: SingleCycleSolution, y):
    """Entry value J(y); identically zero when entry is never optimal."""
    y = np.asarray(y, dtype=float)
    if sol.trivial_start:
        z = np.zeros(y.shape)
        return float(z) if z.shape == () else z
    p, cb = sol.params, sol.costs.c_b
    return _piecewise(y, y <= sol.d_star,
                      lambda x: sol.coef_A * cir.f_of(p, x) - x - cb,
                      lambda x: sol.coef_B * cir.g_of(p, x))
