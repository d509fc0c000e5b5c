"""Threshold recovery from concave majorants in the transformed coordinate z = phi(y).

Stopping: with H(z) = (y - c_s)/F(y) at y = phi^-1(z), V = F * W(phi) where W is
the smallest nonincreasing concave function above H; b* = phi^-1(argmax H).

Starting: with Hh(z) = (V(y) - y - c_b)/F(y), J = F * Wh(phi) for the analogous
majorant Wh, whose last hull vertex before the origin gives d*.

Nothing here calls the root solvers: V/F is taken from the stopping majorant
on the same grid, so the two constructions check the closed forms independently.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import cir
from .cir import UNBOUNDED_BELOW, CirParams, Costs
from .errors import DegenerateGridError, DomainError


class RewardKind(enum.Enum):
    STOP = "StopReward"
    START = "StartReward"


@dataclass(frozen=True)
class TransformedReward:
    kind: RewardKind
    z_grid: np.ndarray
    values: np.ndarray
    y_grid: np.ndarray
    params: CirParams
    costs: Costs


@dataclass(frozen=True)
class MajorantResult:
    kind: RewardKind
    w_values: np.ndarray
    contact_z: float
    contact_y: float
    hull_index: np.ndarray  # grid indices of the concave hull vertices


def _level_grid(params, n, y_max, spacing):
    """Level grid (without the z = 0 endpoint) and its phi-image."""
    if spacing == "auto":
        spacing = "y" if params.feller else "z"
    if spacing == "z":
        z0 = phi_lower(params)
        z1 = float(cir.phi(params, y_max))
        z = np.linspace(z0, z1, n - 1)
        y = np.empty_like(z)
        if not params.feller:
            y[0] = 0.0
            y[1:] = cir.phi_inverse(params, z[1:], y_max=y_max)
        else:
            y[:] = cir.phi_inverse(params, z, y_max=y_max, y_min=0.5 * y_floor(params))
        y[-1] = y_max
        return y, z
    if spacing == "y":
        y_lo = 0.0 if not params.feller else y_floor(params)
        y = np.linspace(y_lo, y_max, n - 1)
        return y, _phi_at(params, y)
    raise ValueError(f"unknown spacing {spacing!r}")


def y_floor(params: CirParams) -> float:
    """Lowest grid level when phi(0) = -inf: 1e-8 theta, raised by decades
    until G is finite there (G grows like y^(1-b) near 0).  Where that
    happens late, b is large and the rewards are flat to order y^b below."""
    y = 1e-8 * params.theta
    while y <= 1.001e-1 * params.theta:
        try:
            if np.isfinite(cir.phi(params, y)):
                return y
        except OverflowError:
            pass
        y *= 10.0
    raise DegenerateGridError(f"G overflows down to y = {y:g}; no usable truncation level")


def phi_lower(params: CirParams) -> float:
    """phi(0) when finite, else the truncation point phi(y_floor)."""
    p0 = cir.phi_at_zero(params)
    if p0 is UNBOUNDED_BELOW:
        return float(cir.phi(params, y_floor(params)))
    return float(p0)


def _phi_at(params, y):
    z = np.empty_like(y)
    zero = y == 0
    z[zero] = phi_lower(params)
    z[~zero] = cir.phi(params, y[~zero])
    return z


def _stop_values(params, costs, y):
    return (y - costs.c_s) / cir.f_of(params, y)


def build_transformed_reward(params: CirParams, costs: Costs, kind: RewardKind = RewardKind.STOP,
                             n_points: int = 50_000, y_max: Optional[float] = None,
                             spacing: str = "auto") -> TransformedReward:
    """Tabulate H (or Hh) on an n_points grid ending with the value 0 at z = 0.

    ``spacing`` is "z" (uniform in z), "y" (uniform in level) or "auto":
    uniform z when phi(0) is finite, uniform y otherwise, since a uniform z
    grid down to the truncation level leaves almost no points near the thresholds.
    Auto also drops to uniform y when the reward peaks in the last tenth of a
    uniform z grid (|phi(0)| much larger than |phi| near the peak).
    ``y_max`` defaults to 5 theta and is doubled until the stopping reward
    peaks strictly inside the grid.
    """
    if n_points < 100:
        raise ValueError("n_points must be at least 100")
    kind = RewardKind(kind)
    y_max = float(y_max) if y_max is not None else 5.0 * params.theta
    if spacing == "auto":
        spacing = "y" if params.feller else "z"
        y, z = _level_grid(params, n_points, y_max, spacing)
        if np.argmax(_stop_values(params, costs, y)) > 0.9 * len(y):
            spacing = "y"
    for _ in range(30):
        y, z = _level_grid(params, n_points, y_max, spacing)
        h = _stop_values(params, costs, y)
        if np.argmax(h) < len(h) - 2:
            break
        y_max *= 2.0
    else:
        raise DegenerateGridError("stopping reward keeps increasing; no interior maximum")
    z = np.append(z, 0.0)
    y = np.append(y, np.inf)
    h = np.append(h, 0.0)
    if kind is RewardKind.STOP:
        return TransformedReward(kind, z, h, y, params, costs)
    stop = TransformedReward(RewardKind.STOP, z, h, y, params, costs)
    w = decreasing_smallest_concave_majorant(stop).w_values
    hh = np.empty_like(h)
    hh[:-1] = w[:-1] - (y[:-1] + costs.c_b) / cir.f_of(params, y[:-1])
    hh[-1] = 0.0
    return TransformedReward(kind, z, hh, y, params, costs)


def upper_hull(z, v):
    """Indices of the upper concave hull of points (z_i, v_i), z increasing (monotone chain)."""
    idx = []
    for i in range(len(z)):
        while len(idx) >= 2:
            a, b = idx[-2], idx[-1]
            # drop b if it lies on or below the chord a -> i; slopes rather than
            # cross products, which underflow in the far tail (H ~ 1e-176)
            if (v[b] - v[a]) / (z[b] - z[a]) <= (v[i] - v[a]) / (z[i] - z[a]):
                idx.pop()
            else:
                break
        idx.append(i)
    return np.array(idx)


def _local_quadratic(z, v, k):
    """Coefficients (a0, a1, a2) of v ~ a0 + a1 u + a2 u^2 with u = z - z[k]."""
    k = min(max(k, 1), len(z) - 2)
    u = z[k - 1:k + 2] - z[k]
    a2, a1, a0 = np.polyfit(u, v[k - 1:k + 2], 2)
    return a0, a1, a2


def _tangency_offset(zk, a0, a1, a2):
    """Offset u at which the line through the origin touches a0 + a1 u + a2 u^2.

    Tangency q(u) = (zk + u) q'(u) gives a2 u^2 + 2 a2 zk u + (a1 zk - a0) = 0;
    the wanted root is the small one, taken from the product of the roots.
    """
    if a2 == 0:
        return (a0 - a1 * zk) / a1 if a1 != 0 else np.nan
    c = (a1 * zk - a0) / a2
    disc = zk * zk - c
    if disc < 0:
        return np.nan
    big = -zk + np.sqrt(disc) if zk < 0 else -zk - np.sqrt(disc)
    return c / big


def decreasing_smallest_concave_majorant(tr: TransformedReward) -> MajorantResult:
    z, v = tr.z_grid, tr.values
    hull = upper_hull(z, v)
    w = np.interp(z, z[hull], v[hull])
    w = np.maximum.accumulate(w[::-1])[::-1]
    if tr.kind is RewardKind.STOP:
        k = int(np.argmax(v))
        if k == 0 or k >= len(z) - 2:
            raise DegenerateGridError("no interior maximum of the stopping reward")
        _, a1, a2 = _local_quadratic(z, v, k)
        zc = z[k] - a1 / (2.0 * a2) if a2 < 0 else z[k]
        if not z[k - 1] <= zc <= z[k + 1]:
            zc = z[k]
    else:
        if len(hull) < 2 or hull[-1] != len(z) - 1 or v[hull[-2]] <= 0:
            raise DegenerateGridError("no tangency from the origin to the starting reward")
        k = int(hull[-2])
        if k == 0:
            raise DegenerateGridError("tangency at the left end of the grid")
        zc = z[k] + _tangency_offset(z[k], *_local_quadratic(z, v, k))
        if not (np.isfinite(zc) and z[k - 1] <= zc <= z[k + 1]):
            zc = z[k]
    zc = float(zc)
    yc = _inverse_at(tr, zc)
    return MajorantResult(tr.kind, w, zc, yc, hull)


def _inverse_at(tr, zc):
    p = tr.params
    lo = cir.phi_at_zero(p)
    if lo is not UNBOUNDED_BELOW and zc <= lo:
        return 0.0
    finite = np.isfinite(tr.y_grid)
    return float(cir.phi_inverse(p, zc, y_max=float(np.max(tr.y_grid[finite]))))


def reconstruct_values(mr: MajorantResult, tr: TransformedReward, y):
    """F(y) * W(phi(y)), linear interpolation of W in z."""
    y = np.asarray(y, dtype=float)
    finite = np.isfinite(tr.y_grid)
    y_hi = float(np.max(tr.y_grid[finite]))
    y_lo = float(np.min(tr.y_grid[finite]))
    if np.any(y < y_lo) or np.any(y > y_hi):
        raise DomainError(f"y outside grid range [{y_lo}, {y_hi}]")
    z = _phi_at(tr.params, np.atleast_1d(y).astype(float)).reshape(y.shape)
    out = cir.f_of(tr.params, y) * np.interp(z, tr.z_grid, mr.w_values)
    return float(out) if np.ndim(out) == 0 else out


def write_csv(path, tr: TransformedReward, mr: MajorantResult):
    """Dump z, y, reward, majorant and F * majorant, one grid point per row."""
    F = np.full(tr.y_grid.shape, np.nan)
    fin = np.isfinite(tr.y_grid)
    F[fin] = cir.f_of(tr.params, tr.y_grid[fin])
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["z", "y", "reward", "majorant", "value"])
        for row in zip(tr.z_grid, tr.y_grid, tr.values, mr.w_values, F * mr.w_values):
            wr.writerow([f"{x:.10g}" for x in row])
