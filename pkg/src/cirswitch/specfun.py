"""Confluent hypergeometric functions M(a, b; z) and U(a, b; z) for real arguments.

Only the real, positive-parameter regime is supported (a > 0, b > 0, z >= 0 in
every call the solvers make).  Evaluation regimes:

=================  ==========================================================
``kummer_m``       power series for z <= 100; large-z asymptotic series above
``tricomi_u``      z < 2: two-Kummer connection formula, or adaptive
                   quadrature of the integral representation when b is within
                   1e-6 of an integer; z >= 2: 80-node generalized
                   Gauss-Laguerre rule applied to the integral representation
=================  ==========================================================

The connection formula cancels catastrophically once e^z is large, which is
why U switches to quadrature well before that happens.  All functions accept a
scalar or array ``z`` and return the same shape.
"""

import math
import warnings
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .errors import DomainError, PrecisionLossWarning, SeriesConvergenceError

M_ASYMPTOTIC_Z = 100.0
U_QUADRATURE_Z = 2.0
INTEGER_B_GAP = 1e-6
SERIES_RTOL = 1e-17
SERIES_MAX_TERMS = 10_000
LAGUERRE_NODES = 80
CANCELLATION_LIMIT = 1e8


def _prepare(a, b, z):
    a = float(a)
    b = float(b)
    if math.isnan(a) or math.isnan(b):
        raise DomainError("NaN parameter")
    z_arr = np.asarray(z, dtype=float)
    if np.isnan(z_arr).any():
        raise DomainError("NaN argument")
    return a, b, np.atleast_1d(z_arr).ravel(), z_arr.shape


def _finish(values, shape):
    if shape == ():
        return float(values[0])
    return values.reshape(shape)


def _near_integer(b):
    return abs(b - round(b)) < INTEGER_B_GAP


def _m_series(a, b, z):
    """Sum the defining series term by term (vectorized over z)."""
    total = np.ones_like(z)
    term = np.ones_like(z)
    z_max = float(np.max(np.abs(z))) if z.size else 0.0
    for n in range(SERIES_MAX_TERMS):
        ratio = (a + n) / (b + n) / (n + 1)
        term = term * ratio * z
        total = total + term
        # terms may still be growing while tiny relative to the sum only if
        # the ratio exceeds one; require it to have dropped below one first
        if abs(ratio) * z_max < 1.0 and np.all(np.abs(term) <= SERIES_RTOL * np.abs(total)):
            return total
    raise SeriesConvergenceError(
        f"M({a}, {b}; z) series not converged after {SERIES_MAX_TERMS} terms "
        f"(max z = {z_max})"
    )


def _m_asymptotic(a, b, z):
    """Large-z expansion, summed up to its smallest term.

    Returns (values, ok) where ok marks points at which the smallest term fell
    below the series tolerance and the dropped subdominant part,
    Gamma(a)/Gamma(b-a) z^(b-2a) e^-z relative to the result, is negligible.
    Elsewhere z is not large relative to b.
    """
    s = np.ones_like(z)
    term = np.ones_like(z)
    prev = np.full_like(z, np.inf)
    ok = np.zeros(z.shape, dtype=bool)
    live = np.ones(z.shape, dtype=bool)
    for k in range(SERIES_MAX_TERMS):
        term = np.where(live, term * (b - a + k) * (1.0 - a + k) / ((k + 1) * z), 0.0)
        mag = np.abs(term)
        # stop at the smallest term: the expansion is only asymptotic
        grow = live & (mag > prev)
        live &= ~grow
        s = s + np.where(live, term, 0.0)
        done = live & (mag <= SERIES_RTOL * np.abs(s))
        ok |= done
        live &= ~done
        prev = mag
        if not live.any():
            break
    sub = special.gammaln(a) - special.gammaln(b - a) + (b - 2.0 * a) * np.log(z) - z
    ok &= sub < -40.0
    log_pref = special.gammaln(b) - special.gammaln(a) + z + (a - b) * np.log(z)
    with np.errstate(over="ignore"):
        out = np.exp(log_pref) * s
    return out, ok


def kummer_m(a, b, z):
    """Kummer's function M(a, b; z) for real a, b and z >= 0.

    Raises DomainError when b is zero or a negative integer, or when z < 0.
    """
    a, b, z, shape = _prepare(a, b, z)
    if b <= 0 and b == round(b):
        raise DomainError(f"b = {b} is a nonpositive integer")
    if np.any(z < 0):
        raise DomainError("kummer_m requires z >= 0")
    out = np.empty_like(z)
    small = np.ones_like(z, dtype=bool)
    big = z > M_ASYMPTOTIC_Z
    if a > 0 and b > 0 and big.any():
        vals, ok = _m_asymptotic(a, b, z[big])
        idx = np.nonzero(big)[0][ok]
        out[idx] = vals[ok]
        small[idx] = False
    if small.any():
        out[small] = _m_series(a, b, z[small])
    if not np.all(np.isfinite(out)):
        raise OverflowError(f"M({a}, {b}; z) overflowed")
    return _finish(out, shape)


def kummer_m_prime(a, b, z):
    """dM/dz = (a/b) M(a+1, b+1; z)."""
    return _scale(a / b, kummer_m(a + 1.0, b + 1.0, z))


def kummer_m_second(a, b, z):
    """d^2M/dz^2 = a(a+1)/(b(b+1)) M(a+2, b+2; z)."""
    return _scale(a * (a + 1.0) / (b * (b + 1.0)), kummer_m(a + 2.0, b + 2.0, z))


def _scale(c, v):
    return c * v if isinstance(v, float) else c * np.asarray(v)


@lru_cache(maxsize=128)
def _laguerre_rule(alpha, n):
    x, w = special.roots_genlaguerre(n, alpha)
    return x, w


def _u_laguerre(a, b, z):
    # U = z^-a / Gamma(a) * int_0^inf e^-s s^(a-1) (1 + s/z)^(b-a-1) ds
    x, w = _laguerre_rule(a - 1.0, LAGUERRE_NODES)
    c = b - a - 1.0
    out = np.empty_like(z)
    for start in range(0, z.size, 4096):
        zz = z[start:start + 4096]
        # sum in scaled form so large b - a - 1 cannot overflow the nodes early
        e = c * np.log1p(x[None, :] / zz[:, None]) - a * np.log(zz)[:, None]
        top = e.max(axis=1)
        with np.errstate(over="ignore", divide="ignore"):
            s = np.exp(e - top[:, None]) @ w
            out[start:start + 4096] = np.exp(top - special.gammaln(a) + np.log(s))
    return out


def _u_kummer(a, b, z):
    if b == round(b):
        raise DomainError(f"connection formula undefined at integer b = {b}")
    with np.errstate(over="ignore", invalid="ignore"):
        t1 = special.gamma(1.0 - b) * special.rgamma(a - b + 1.0) * _m_series(a, b, z)
        t2 = (
            special.gamma(b - 1.0)
            * special.rgamma(a)
            * z ** (1.0 - b)
            * _m_series(a - b + 1.0, 2.0 - b, z)
        )
        u = t1 + t2
    if not np.all(np.isfinite(u)):
        raise OverflowError(f"U({a}, {b}; z) exceeds the float range for z down to {float(np.min(z)):.6g}")
    with np.errstate(divide="ignore", invalid="ignore"):
        loss = np.maximum(np.abs(t1), np.abs(t2)) / np.abs(u)
    worst = float(np.nanmax(loss)) if loss.size else 0.0
    if not worst < CANCELLATION_LIMIT:
        warnings.warn(
            f"U({a}, {b}; z) via connection formula: terms exceed the result by "
            f"{worst:.3g}x; about {math.log10(max(worst, 1.0)):.0f} digits lost",
            PrecisionLossWarning,
            stacklevel=3,
        )
    return u


def _u_adaptive(a, b, z):
    c = b - a - 1.0

    def log_f(s):
        return -s + (a - 1.0) * math.log(s) + c * math.log1p(s / z)

    # shift the integrand by its peak so large b - a - 1 cannot overflow
    s_grid = np.geomspace(1e-6, 1e3 + 10.0 * max(c, 0.0), 400)
    shift = max(0.0, max(log_f(x) for x in s_grid))

    def near(s):
        return math.exp(-s + c * math.log1p(s / z) - shift)

    def far(s):
        return math.exp(log_f(s) - shift)

    i1, _ = integrate.quad(near, 0.0, 1.0, weight="alg", wvar=(a - 1.0, 0.0),
                           epsabs=0.0, epsrel=1e-13, limit=200)
    i2, _ = integrate.quad(far, 1.0, np.inf, epsabs=0.0, epsrel=1e-13, limit=200)
    log_u = math.log(i1 + i2) + shift - a * math.log(z) - special.gammaln(a)
    if log_u > 709.0:
        raise OverflowError(f"U({a}, {b}; {z}) exceeds the float range")
    return math.exp(log_u)


def tricomi_u(a, b, z, method="auto"):
    """Tricomi's function U(a, b; z) for a > 0 and z > 0.

    ``method`` forces one evaluation route: ``"kummer"`` (connection formula),
    ``"integral"`` (adaptive quadrature), ``"laguerre"`` (fixed Gauss-Laguerre).
    The default picks per point as described in the module docstring.
    """
    a, b, z, shape = _prepare(a, b, z)
    if a <= 0:
        raise DomainError("tricomi_u requires a > 0")
    if np.any(z <= 0):
        raise DomainError("tricomi_u requires z > 0; see tricomi_u_at_zero")
    if method == "kummer":
        out = _u_kummer(a, b, z)
    elif method == "integral":
        out = np.array([_u_adaptive(a, b, zi) for zi in z])
    elif method == "laguerre":
        out = _u_laguerre(a, b, z)
    elif method == "auto":
        out = np.empty_like(z)
        small = z < U_QUADRATURE_Z
        if small.any():
            if _near_integer(b):
                out[small] = [_u_adaptive(a, b, zi) for zi in z[small]]
            else:
                out[small] = _u_kummer(a, b, z[small])
        if (~small).any():
            out[~small] = _u_laguerre(a, b, z[~small])
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.all(np.isfinite(out)):
        raise OverflowError(f"U({a}, {b}; z) exceeds the float range")
    return _finish(out, shape)


def tricomi_u_prime(a, b, z):
    """dU/dz = -a U(a+1, b+1; z)."""
    return _scale(-a, tricomi_u(a + 1.0, b + 1.0, z))


def tricomi_u_second(a, b, z):
    """d^2U/dz^2 = a(a+1) U(a+2, b+2; z)."""
    return _scale(a * (a + 1.0), tricomi_u(a + 2.0, b + 2.0, z))


def tricomi_u_at_zero(a, b):
    """Limit of U(a, b; z) as z -> 0+, finite only for b < 1.

    Equals the integral representation at z = 0, i.e. B(a, 1-b) / Gamma(a).
    """
    if a <= 0:
        raise DomainError("tricomi_u_at_zero requires a > 0")
    if b >= 1:
        raise DomainError(f"U({a}, {b}; z) diverges as z -> 0+ for b >= 1")
    return float(special.gamma(1.0 - b) * special.rgamma(a - b + 1.0))
