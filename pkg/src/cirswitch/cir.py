"""CIR model data, the fundamental solutions F and G, and the transform phi = -G/F.

F(y) = M(r/mu, 2 mu theta / sigma^2; 2 mu y / sigma^2) is the increasing and
G(y) = U(same; same) the decreasing positive solution of (L - r)u = 0, with

    L = (sigma^2 y / 2) d^2/dy^2 + mu (theta - y) d/dy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import specfun
from .errors import BracketError, DomainError


@dataclass(frozen=True)
class CirParams:
    mu: float
    theta: float
    sigma: float
    r: float

    def __post_init__(self):
        for name in ("mu", "theta", "sigma", "r"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive finite number, got {v!r}")

    @property
    def feller(self) -> bool:
        """True when 2 mu theta >= sigma^2, i.e. level 0 is inaccessible."""
        return 2.0 * self.mu * self.theta >= self.sigma ** 2

    @property
    def a(self) -> float:
        return self.r / self.mu

    @property
    def b(self) -> float:
        return 2.0 * self.mu * self.theta / self.sigma ** 2

    @property
    def kappa(self) -> float:
        """Scale mapping a level y to the hypergeometric argument kappa * y."""
        return 2.0 * self.mu / self.sigma ** 2


@dataclass(frozen=True)
class Costs:
    c_b: float
    c_s: float

    def __post_init__(self):
        for name in ("c_b", "c_s"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive finite number, got {v!r}")


@dataclass(frozen=True)
class CriticalLevels:
    y_b: float
    y_s: float


class _UnboundedBelow:
    """Marker for phi(0) = -inf when level 0 is inaccessible."""

    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "UNBOUNDED_BELOW"


UNBOUNDED_BELOW = _UnboundedBelow()


def critical_levels(params: CirParams, costs: Costs) -> CriticalLevels:
    mu, theta, r = params.mu, params.theta, params.r
    return CriticalLevels(
        y_b=(mu * theta - r * costs.c_b) / (mu + r),
        y_s=(mu * theta + r * costs.c_s) / (mu + r),
    )


def _check_level(y, allow_zero=True):
    arr = np.asarray(y, dtype=float)
    if np.isnan(arr).any():
        raise DomainError("NaN level")
    if allow_zero and np.any(arr < 0):
        raise DomainError("levels must be nonnegative")
    return arr


def f_of(params: CirParams, y):
    _check_level(y)
    return specfun.kummer_m(params.a, params.b, params.kappa * np.asarray(y, dtype=float))


def f_prime(params: CirParams, y):
    _check_level(y)
    k = params.kappa
    return k * np.asarray(specfun.kummer_m_prime(params.a, params.b, k * np.asarray(y, dtype=float)))[()]


def f_second(params: CirParams, y):
    _check_level(y)
    k = params.kappa
    return k * k * np.asarray(specfun.kummer_m_second(params.a, params.b, k * np.asarray(y, dtype=float)))[()]


def _g_generic(params, y, fn, at_zero, power):
    arr = _check_level(y)
    k = params.kappa
    pos = arr > 0
    if pos.all():
        return k ** power * np.asarray(fn(params.a, params.b, k * arr))[()]
    if at_zero is None:
        raise DomainError("G and its derivatives diverge at y = 0")
    out = np.full(arr.shape, at_zero, dtype=float)
    if pos.any():
        out[pos] = k ** power * np.asarray(fn(params.a, params.b, k * arr[pos]))
    return out[()]


def g_of(params: CirParams, y):
    """G(y); at y = 0 finite only in the reflecting case (2 mu theta < sigma^2)."""
    at_zero = None if params.feller else specfun.tricomi_u_at_zero(params.a, params.b)
    return _g_generic(params, y, specfun.tricomi_u, at_zero, 0)


def g_prime(params: CirParams, y):
    return _g_generic(params, y, specfun.tricomi_u_prime, None, 1)


def g_second(params: CirParams, y):
    return _g_generic(params, y, specfun.tricomi_u_second, None, 2)


def wronskian(params: CirParams, y):
    """F'(y) G(y) - F(y) G'(y), positive for every y > 0."""
    return f_prime(params, y) * g_of(params, y) - f_of(params, y) * g_prime(params, y)


def phi(params: CirParams, y):
    """phi(y) = -G(y)/F(y): strictly increasing and negative."""
    return -g_of(params, y) / f_of(params, y)


def phi_prime(params: CirParams, y):
    with np.errstate(over="ignore"):
        return wronskian(params, y) / f_of(params, y) ** 2


def phi_at_zero(params: CirParams):
    """phi(0) as a float in the reflecting case, else ``UNBOUNDED_BELOW``."""
    if params.feller:
        return UNBOUNDED_BELOW
    return -specfun.tricomi_u_at_zero(params.a, params.b)


def phi_inverse(params: CirParams, z, y_min: float = 1e-12, y_max: Optional[float] = None,
                ytol: float = 1e-12):
    """Invert phi by safeguarded Newton inside a maintained bisection bracket.

    Works elementwise on arrays; ``ytol`` is relative to y.  The upper bracket starts at ``y_max``
    (default 2 theta) and doubles until phi(y_max) >= z for every target.
    """
    z_arr = np.asarray(z, dtype=float)
    zf = np.atleast_1d(z_arr).ravel().copy()
    if np.any(zf >= 0) or np.isnan(zf).any():
        raise DomainError("phi takes values in (phi(0), 0); got z >= 0 or NaN")
    lo_z = phi_at_zero(params)
    if lo_z is not UNBOUNDED_BELOW and np.any(zf < lo_z):
        raise DomainError(f"z below phi(0) = {lo_z}")

    hi = float(y_max) if y_max is not None else 2.0 * params.theta
    good = None
    for _ in range(200):
        try:
            ok = np.all(phi(params, hi) >= zf)
        except OverflowError:
            # F left the float range: creep up from the last finite level
            if good is None or hi - good < 1e-12 * hi:
                raise
            hi = 0.5 * (good + hi)
            continue
        if ok:
            break
        good = hi
        hi *= 2.0
    else:
        raise BracketError("could not bracket phi^-1 from above")

    lo_arr = np.full_like(zf, 0.0 if lo_z is not UNBOUNDED_BELOW else y_min)
    hi_arr = np.full_like(zf, hi)
    if lo_z is UNBOUNDED_BELOW:
        # targets below phi(y_min) are reported at y_min
        below = _phi_safe(params, lo_arr) > zf
        if below.any():
            raise BracketError(f"target z below phi(y_min={y_min})")
    y = 0.5 * (lo_arr + hi_arr)
    active = np.ones_like(zf, dtype=bool)
    for _ in range(400):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        yi = y[idx]
        resid = _phi_safe(params, yi) - zf[idx]
        up = resid < 0
        lo_arr[idx[up]] = yi[up]
        hi_arr[idx[~up]] = yi[~up]
        slope = phi_prime(params, yi)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = yi - resid / slope
        bad = ~np.isfinite(step) | (step <= lo_arr[idx]) | (step >= hi_arr[idx])
        step = np.where(bad, 0.5 * (lo_arr[idx] + hi_arr[idx]), step)
        # relative: levels near 0 carry most of the z-range when phi(0) is finite
        tol = ytol * yi + 1e-300
        done = (np.abs(step - yi) <= tol) | (hi_arr[idx] - lo_arr[idx] <= tol)
        y[idx] = step
        active[idx[done]] = False
    out = y.reshape(z_arr.shape)
    return float(out) if out.shape == () else out


def _phi_safe(params, y):
    """phi with -inf where G leaves the float range."""
    y = np.asarray(y, dtype=float)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        try:
            v = np.asarray(phi(params, y), dtype=float)
        except OverflowError:
            if y.ndim == 0:
                return np.asarray(-np.inf)
            v = np.array([_phi_safe(params, yi) for yi in y])
    return np.where(np.isfinite(v), v, -np.inf)


def generator_residual(params: CirParams, u: Callable, y, du: Optional[Callable] = None,
                       d2u: Optional[Callable] = None, step: Optional[float] = None):
    """(L - r) u evaluated at y.

    Derivatives fall back to central differences with step
    ``1e-5 * max(1, y)`` unless callables are supplied.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise DomainError("generator_residual needs y > 0")
    h = step if step is not None else 1e-5 * np.maximum(1.0, y)
    u0 = np.asarray(u(y), dtype=float)
    if du is None or d2u is None:
        up = np.asarray(u(y + h), dtype=float)
        um = np.asarray(u(y - h), dtype=float)
    d1 = np.asarray(du(y), dtype=float) if du is not None else (up - um) / (2.0 * h)
    d2 = np.asarray(d2u(y), dtype=float) if d2u is not None else (up - 2.0 * u0 + um) / (h * h)
    out = 0.5 * params.sigma ** 2 * y * d2 + params.mu * (params.theta - y) * d1 - params.r * u0
    return out[()] if isinstance(out, np.ndarray) else out
