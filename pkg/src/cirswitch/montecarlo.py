"""Monte Carlo oracles: CIR path simulation, policy valuation, hitting functionals.

Two schemes are available.  ``exact`` draws each step from the scaled
noncentral chi-square transition, which is exact for any step size and both
boundary regimes.  ``euler`` is full-truncation Euler (positive parts inside
drift and diffusion, reported level max(y, 0)).

Barrier crossings are only seen at step ends.  With the exact scheme, policy
and hitting simulations may take steps of up to ``max_mult * dt`` while the
relevant barrier is more than ``guard`` standard deviations away, which cuts
cost by an order of magnitude without changing what is detected.

With ``bridge`` on, a step that ends short of a barrier still counts as a
crossing with the Brownian-bridge probability exp(-2 (y1 - c)(y2 - c) / (sigma^2 c h)),
local variance frozen at the barrier c.  Without it the discretely monitored
estimate sees crossings late, with an O(sqrt(dt)) bias.  Crossings settle at
the step end, at the barrier level.

Every batch of paths owns a Generator spawned from ``SeedSequence(seed)``, so
results are identical for a given seed whatever the thread count.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from . import cir
from .cir import CirParams, Costs
from .errors import CensoringWarning, DomainError

SCHEMES = ("exact", "euler")

@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.005
    horizon: float = 200.0
    n_paths: int = 100_000
    seed: int = 0
    scheme: str = "exact"
    adaptive: bool = True
    max_mult: int = 128
    guard: float = 5.0
    batch_size: int = 5_000
    jobs: Optional[int] = None
    bridge: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.n_paths < 2:
            raise ValueError("need at least two paths")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")

    @classmethod
    def for_params(cls, params: CirParams, **kw):
        """Default config with dt = 1e-3 / mu."""
        kw.setdefault("dt", 1e-3 / params.mu)
        return cls(**kw)


@dataclass(frozen=True)
class PolicyValuation:
    estimate: float
    std_error: float
    n_effective: int
    n_censored: int = 0
    truncation_bound: float = 0.0
    mean_cycles: float = 0.0

    def within(self, target, k=3.0, slack=0.0) -> bool:
        return abs(self.estimate - target) <= k * self.std_error + slack


# ------------------------------------------------------------------ kernels

@njit(cache=True, nogil=True)
def _step(rng, y, h, mu, theta, sigma, exact):
    if exact:
        e = math.exp(-mu * h)
        c = sigma * sigma * (1.0 - e) / (4.0 * mu)
        df = 4.0 * mu * theta / (sigma * sigma)
        lam = y * e / c
        if df > 1.0:
            z = rng.standard_normal() + math.sqrt(lam)
            return c * (z * z + 2.0 * rng.standard_gamma(0.5 * (df - 1.0)))
        n = rng.poisson(0.5 * lam)
        return c * 2.0 * rng.standard_gamma(0.5 * df + n)
    yp = max(y, 0.0)
    return y + mu * (theta - yp) * h + sigma * math.sqrt(yp * h) * rng.standard_normal()


@njit(cache=True)
def _mult(dist, drift, yref, sigma, dt, guard, max_mult):
    # largest power-of-two multiple m with dist - drift*h >= guard*sigma*sqrt(yref*h)
    m = 1
    while m * 2 <= max_mult:
        h = 2 * m * dt
        if dist - drift * h >= guard * sigma * math.sqrt(max(yref, 0.0) * h):
            m *= 2
        else:
            break
    return m


@njit(cache=True)
def _crossed(rng, y1, y2, level, sigma, h, bridge):
    """Did the path cross ``level`` inside a step from y1 to y2 (both on one side)?

    Brownian-bridge probability with the local variance frozen at the level.
    """
    if not bridge or level <= 0.0:
        return False
    v = sigma * sigma * level * h
    return rng.random() < math.exp(-2.0 * (y1 - level) * (y2 - level) / v)


@njit(cache=True, nogil=True)
def _policy_kernel(rng, n, y0, d, b, start_long, cap, mu, theta, sigma, r, cb, cs,
                   dt, horizon, exact, adaptive, guard, max_mult, bridge, pay, cycles,
                   final_y, final_long, final_t):
    """Alternate entries at y <= d and exits at y >= b; stop after ``cap`` exits.

    Trades settle at d or b, where a continuous path crosses, except at t = 0.
    """
    for p in range(n):
        y = max(y0, 0.0)
        t = 0.0
        long = start_long
        value = 0.0
        exits = 0
        if not long and y <= d:
            value -= y + cb
            long = True
        if long and y >= b:
            value += y - cs
            long = False
            exits += 1
        while t < horizon and exits < cap:
            m = 1
            if adaptive and exact:
                if long:
                    m = _mult(b - y, mu * max(theta - y, 0.0), b, sigma, dt, guard, max_mult)
                else:
                    m = _mult(y - d, mu * max(y - theta, 0.0), y, sigma, dt, guard, max_mult)
            h = m * dt
            y1 = y
            y = max(_step(rng, y, h, mu, theta, sigma, exact), 0.0)
            t += h
            if long:
                if y >= b or _crossed(rng, y1, y, b, sigma, h, bridge):
                    value += math.exp(-r * t) * (b - cs)
                    long = False
                    exits += 1
            elif y <= d or _crossed(rng, y1, y, d, sigma, h, bridge):
                value -= math.exp(-r * t) * (d + cb)
                long = True
        pay[p] = value
        cycles[p] = exits
        final_y[p] = y
        final_long[p] = long
        final_t[p] = t


@njit(cache=True, nogil=True)
def _hitting_kernel(rng, n, y0, a, b, mu, theta, sigma, r, dt, horizon, exact, adaptive,
                    guard, max_mult, bridge, low, high):
    for p in range(n):
        y = y0
        t = 0.0
        low[p] = 0.0
        high[p] = 0.0
        if y <= a:
            low[p] = 1.0
            continue
        if y >= b:
            high[p] = 1.0
            continue
        while t < horizon:
            m = 1
            if adaptive and exact:
                m1 = _mult(b - y, mu * max(theta - y, 0.0), b, sigma, dt, guard, max_mult)
                m2 = _mult(y - a, mu * max(y - theta, 0.0), y, sigma, dt, guard, max_mult)
                m = min(m1, m2)
            h = m * dt
            y1 = y
            y = max(_step(rng, y, h, mu, theta, sigma, exact), 0.0)
            t += h
            if y <= a or _crossed(rng, y1, y, a, sigma, h, bridge):
                low[p] = math.exp(-r * t)
                break
            if y >= b or _crossed(rng, y1, y, b, sigma, h, bridge):
                high[p] = math.exp(-r * t)
                break


@njit(cache=True, nogil=True)
def _terminal_kernel(rng, n, y0, t_end, mu, theta, sigma, dt, exact, out):
    for p in range(n):
        y = y0
        if exact:
            y = _step(rng, y, t_end, mu, theta, sigma, True)
        else:
            k = max(int(round(t_end / dt)), 1)
            h = t_end / k
            for _ in range(k):
                y = _step(rng, y, h, mu, theta, sigma, False)
        out[p] = max(y, 0.0)


@njit(cache=True, nogil=True)
def _path_kernel(rng, y0, n_steps, dt, mu, theta, sigma, exact, out):
    y = y0
    out[0] = y0
    for i in range(1, n_steps + 1):
        y = _step(rng, y, dt, mu, theta, sigma, exact)
        out[i] = max(y, 0.0)


# ---------------------------------------------------------------- batching

def _batches(cfg: SimConfig):
    sizes = []
    left = cfg.n_paths
    while left > 0:
        sizes.append(min(cfg.batch_size, left))
        left -= sizes[-1]
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(sizes))
    return [(s, np.random.default_rng(ss)) for s, ss in zip(sizes, seeds)]


def _run(cfg: SimConfig, job):
    """Run ``job(rng, size)`` per batch, possibly on threads; results in batch order."""
    batches = _batches(cfg)
    if cfg.jobs == 1 or len(batches) == 1:
        return [job(rng, size) for size, rng in batches]
    with ThreadPoolExecutor(max_workers=cfg.jobs) as ex:
        return list(ex.map(lambda br: job(br[1], br[0]), batches))


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


# --------------------------------------------------------------- public API

def simulate_path(params: CirParams, y0: float, cfg: SimConfig):
    """One path on the fixed grid 0, dt, ..., horizon.  Returns (t, y)."""
    if y0 < 0:
        raise DomainError("y0 must be nonnegative")
    n = int(math.ceil(cfg.horizon / cfg.dt - 1e-9))
    out = np.empty(n + 1)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    _path_kernel(rng, float(y0), n, cfg.dt, params.mu, params.theta, params.sigma,
                 cfg.scheme == "exact", out)
    return np.arange(n + 1) * cfg.dt, out


def simulate_terminal(params: CirParams, y0: float, t: float, cfg: SimConfig) -> np.ndarray:
    """Y_t for cfg.n_paths independent paths started at y0."""
    if y0 < 0:
        raise DomainError("y0 must be nonnegative")
    if t == 0:
        return np.full(cfg.n_paths, float(y0))
    exact = cfg.scheme == "exact"

    def job(rng, size):
        out = np.empty(size)
        _terminal_kernel(rng, size, float(y0), float(t), params.mu, params.theta,
                         params.sigma, cfg.dt, exact, out)
        return out

    return np.concatenate(_run(cfg, job))


def _policy(params, costs, y0, d, b, start_long, cap, cfg):
    exact = cfg.scheme == "exact"
    d = -1.0 if d is None else float(d)
    b = float(b)

    def job(rng, size):
        pay = np.empty(size)
        cyc = np.empty(size, dtype=np.int64)
        fy = np.empty(size)
        fl = np.empty(size, dtype=np.bool_)
        ft = np.empty(size)
        _policy_kernel(rng, size, float(y0), d, b, start_long, cap, params.mu, params.theta,
                       params.sigma, params.r, costs.c_b, costs.c_s, cfg.dt, cfg.horizon,
                       exact, cfg.adaptive, cfg.guard, cfg.max_mult, cfg.bridge,
                       pay, cyc, fy, fl, ft)
        return pay, cyc, fy, fl, ft

    parts = _run(cfg, job)
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(5))


def _tail_bound(params, costs, final_y, final_long, final_t):
    """Bound on the discounted value still available after the horizon.

    Any later round trip earns at most mu theta / r in discounted drift, and an
    open position is worth at most its level plus the saved stopping cost.
    """
    w = np.exp(-params.r * final_t)
    return w * (params.mu * params.theta / params.r + costs.c_s + final_y * final_long)


def value_single_policy(params: CirParams, costs: Costs, y0: float, d: Optional[float], b: float,
                        cfg: SimConfig) -> PolicyValuation:
    """Value of one round trip: enter at the first y <= d, exit at the first y >= b.

    With ``d=None`` the position is held from the start (pure stopping).
    """
    if d is not None and not d < b:
        raise ValueError("need d < b")
    start_long = d is None
    pay, cyc, fy, fl, ft = _policy(params, costs, y0, d, b, start_long, 1, cfg)
    censored = cyc < 1
    est, se = _mean_se(pay)
    bound = float(np.sum(_tail_bound(params, costs, fy, fl, ft)[censored]) / pay.size)
    if censored.mean() > 1e-3:
        warnings.warn(f"{censored.sum()} of {pay.size} paths did not finish the cycle; "
                      f"their remaining value is at most {bound:.3g} per path on average",
                      CensoringWarning, stacklevel=2)
    return PolicyValuation(est, se, int(pay.size - censored.sum()), int(censored.sum()), bound,
                           float(cyc.mean()))


def value_switching_policy(params: CirParams, costs: Costs, y0: float, d_tilde: float,
                           b_tilde: float, cfg: SimConfig, n_cycles_cap: int = 10**9,
                           start_long: bool = False) -> PolicyValuation:
    """Value of entering at d~ and exiting at b~ repeatedly.

    Paths run until ``n_cycles_cap`` exits or the horizon.  ``truncation_bound``
    is the mean bound on value forgone at the horizon; the horizon should make
    it small against the standard error (e^{-r T} < 1e-6 is ample).
    """
    if not 0 <= d_tilde < b_tilde:
        raise ValueError("need 0 <= d~ < b~")
    pay, cyc, fy, fl, ft = _policy(params, costs, y0, d_tilde, b_tilde, start_long,
                                   int(n_cycles_cap), cfg)
    est, se = _mean_se(pay)
    running = cyc < n_cycles_cap
    bound = float(np.sum(_tail_bound(params, costs, fy, fl, ft)[running]) / pay.size)
    capped = int(np.sum(~running))
    if capped and n_cycles_cap < 10**9:
        warnings.warn(f"{capped} paths hit the {n_cycles_cap}-cycle cap", CensoringWarning,
                      stacklevel=2)
    return PolicyValuation(est, se, int(pay.size), int(running.sum()), bound, float(cyc.mean()))


def hitting_closed_form(params: CirParams, y0: float, a: float, b: float):
    """(E[e^{-r tau_a}; tau_a < tau_b], E[e^{-r tau_b}; tau_b < tau_a]) from F and G."""
    if not 0 <= a <= y0 <= b or a == b:
        raise DomainError("need 0 <= a <= y0 <= b with a < b")
    if a == 0 and params.feller:
        # level 0 is never reached
        F = cir.f_of
        return 0.0, float(F(params, y0) / F(params, b))
    Fy, Fa, Fb = (float(cir.f_of(params, x)) for x in (y0, a, b))
    Gy, Ga, Gb = (float(cir.g_of(params, x)) for x in (y0, a, b))
    den = Fa * Gb - Fb * Ga
    return (Fy * Gb - Fb * Gy) / den, (Fa * Gy - Fy * Ga) / den


def hitting_functional(params: CirParams, y0: float, a: float, b: float, cfg: SimConfig):
    """MC estimates of both discounted hitting functionals, as two PolicyValuations.

    A reflecting 0 cannot serve as the lower level: the process touches it
    without ever sitting there at a step end.
    """
    if not 0 <= a <= y0 <= b or a == b:
        raise DomainError("need 0 <= a <= y0 <= b with a < b")
    if a == 0 and not params.feller:
        raise DomainError("hitting a reflecting 0 is not observable on a step grid")
    exact = cfg.scheme == "exact"

    def job(rng, size):
        lo = np.empty(size)
        hi = np.empty(size)
        _hitting_kernel(rng, size, float(y0), float(a), float(b), params.mu, params.theta,
                        params.sigma, params.r, cfg.dt, cfg.horizon, exact, cfg.adaptive,
                        cfg.guard, cfg.max_mult, cfg.bridge, lo, hi)
        return lo, hi

    parts = _run(cfg, job)
    lo = np.concatenate([p[0] for p in parts])
    hi = np.concatenate([p[1] for p in parts])
    out = []
    for x in (lo, hi):
        est, se = _mean_se(x)
        out.append(PolicyValuation(est, se, int(x.size)))
    return tuple(out)


@dataclass(frozen=True)
class MartingaleReport:
    t: float
    f_target: float
    f_mc: PolicyValuation
    g_target: float
    g_mc: PolicyValuation

    @property
    def passed(self) -> bool:
        return self.f_mc.within(self.f_target) and self.g_mc.within(self.g_target)


def martingale_check(params: CirParams, y0: float, t: float, cfg: SimConfig) -> MartingaleReport:
    """Compare E[e^{-rt} F(Y_t)], E[e^{-rt} G(Y_t)] with F(y0), G(y0).

    When 0 reflects, only F meets the boundary condition there; the G part
    loses value at each visit to 0 and is a strict supermartingale, so its
    check is meaningful only while such visits are rare.  F(Y_t) has finite
    k-th moment only while 1 - e^{-mu t} < 1/k.
    """
    if t < 0:
        raise DomainError("t must be nonnegative")
    yt = simulate_terminal(params, y0, t, cfg)
    disc = math.exp(-params.r * t)
    res = []
    for fn in (cir.f_of, cir.g_of):
        vals = disc * np.asarray(fn(params, yt), dtype=float)
        if t == 0:
            res.append(PolicyValuation(float(vals[0]), 0.0, int(vals.size)))
        else:
            est, se = _mean_se(vals)
            res.append(PolicyValuation(est, se, int(vals.size)))
    return MartingaleReport(t, float(cir.f_of(params, y0)), res[0], float(cir.g_of(params, y0)),
                            res[1])
