"""Infinite switching: enter at d~, exit at b~, repeat forever.

Either entry is never optimal (y_b <= 0 or c_b >= A from the single-cycle
problem), and then J~ = 0 and V~ = V; or the thresholds solve

    K(d; c_b) = K(b; -c_s),   Q(d; c_b) = Q(b; -c_s)

with K(x; c) = (G - (x + c) G') / W and Q(x; c) = (F - (x + c) F') / W,
W = F'G - FG' the Wronskian.  Values are then

    J~ = K F - (y + c_b) on [0, d~],   Q G          above d~
    V~ = K F             on [0, b~),   Q G + y - c_s from b~ on.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize

from . import cir
from .cir import CirParams, Costs
from .errors import InvariantViolation, SolverError
from .single_cycle import SingleCycleSolution, _piecewise, solve_single_cycle, value_v


class Regime(enum.Enum):
    NEVER_START = "NeverStart"
    REPEATED = "Repeated"


@dataclass(frozen=True)
class SwitchingSolution:
    params: CirParams
    costs: Costs
    regime: Regime
    single: SingleCycleSolution
    d_tilde: Optional[float] = None
    b_tilde: Optional[float] = None
    coef_K: Optional[float] = None
    coef_Q: Optional[float] = None
    residuals: tuple = (0.0, 0.0)

    @property
    def b_star_ref(self) -> float:
        return self.single.b_star


def classify_regime(params: CirParams, costs: Costs, single: SingleCycleSolution) -> Regime:
    y_b = cir.critical_levels(params, costs).y_b
    if y_b <= 0 or costs.c_b >= single.coef_A:
        return Regime.NEVER_START
    return Regime.REPEATED


def _kq(params, x, c, scales=False):
    """K, Q at x with cost shift c, and their x-derivatives.

    With ``scales`` also returns the sizes of the terms that cancel inside
    K and Q, the natural unit for their residuals.
    """
    F, Fp, Fpp = cir.f_of(params, x), cir.f_prime(params, x), cir.f_second(params, x)
    G, Gp, Gpp = cir.g_of(params, x), cir.g_prime(params, x), cir.g_second(params, x)
    w = Fp * G - F * Gp
    if np.any(np.asarray(w) <= 0):
        raise InvariantViolation(f"nonpositive Wronskian at x = {x}")
    K = (G - (x + c) * Gp) / w
    Q = (F - (x + c) * Fp) / w
    # W' = -2 mu (theta - x) / (sigma^2 x) * W
    s = 2.0 * params.mu * (params.theta - x) / (params.sigma ** 2 * x)
    dK = -(x + c) * Gpp / w + K * s
    dQ = -(x + c) * Fpp / w + Q * s
    if scales:
        return K, Q, dK, dQ, (np.abs(G) + np.abs((x + c) * Gp)) / w, (np.abs(F) + np.abs((x + c) * Fp)) / w
    return K, Q, dK, dQ


def _system(params, costs, d, b):
    # Q vanishes where switching collapses onto the single cycle, so each
    # equation is scaled by its term sizes rather than by |K| or |Q|
    Kd, Qd, dKd, dQd, skd, sqd = _kq(params, d, costs.c_b, True)
    Kb, Qb, dKb, dQb, skb, sqb = _kq(params, b, -costs.c_s, True)
    sk = skd + skb
    sq = sqd + sqb
    res = np.array([(Kd - Kb) / sk, (Qd - Qb) / sq])
    jac = np.array([[dKd / sk, -dKb / sk], [dQd / sq, -dQb / sq]])
    raw = (Kd - Kb, Qd - Qb)
    return res, jac, raw, (Kd, Qd)


def _newton(params, costs, d0, b0, box, tol=1e-13, max_iter=100):
    lo_d, hi_d, lo_b = box
    x = np.array([d0, b0], dtype=float)
    res, jac, raw, _ = _system(params, costs, *x)
    norm = np.linalg.norm(res)
    history = [(x.copy(), norm)]
    for _ in range(max_iter):
        if norm <= tol:
            return x, history
        try:
            step = np.linalg.solve(jac, -res)
        except np.linalg.LinAlgError as exc:
            raise SolverError("singular Jacobian", history) from exc
        lam = 1.0
        while lam > 1e-8:
            xn = x + lam * step
            if lo_d < xn[0] < hi_d and xn[1] > lo_b:
                try:
                    rn, jn, rawn, _ = _system(params, costs, *xn)
                except OverflowError:
                    # trial point beyond the float range of F or G: shorten
                    lam *= 0.5
                    continue
                nn = np.linalg.norm(rn)
                if nn < norm or nn <= tol:
                    break
            lam *= 0.5
        else:
            raise SolverError("line search stalled", history)
        x, res, jac, norm = xn, rn, jn, nn
        history.append((x.copy(), norm))
        if np.all(np.abs(lam * step) <= 1e-15 * np.maximum(1.0, np.abs(x))):
            break
    if norm > 1e-10:
        raise SolverError(f"Newton stopped at scaled residual {norm:.3g}", history)
    return x, history


def grid_oracle(params: CirParams, costs: Costs, b_max: float, step: float = 1e-4,
                refine: bool = True):
    """Minimize the scaled residual norm over a (d, b) grid, then polish.

    Separable: K, Q are tabulated once on each axis and combined by broadcasting.
    Polishing uses Nelder-Mead, independent of the Newton iteration.
    """
    lv = cir.critical_levels(params, costs)
    ds = np.arange(step, lv.y_b, step)
    bs = np.arange(lv.y_s + step, b_max, step)
    Kd, Qd, _, _, skd, sqd = _kq(params, ds, costs.c_b, True)
    Kb, Qb, _, _, skb, sqb = _kq(params, bs, -costs.c_s, True)
    rk = (Kd[:, None] - Kb[None, :]) / (skd[:, None] + skb[None, :])
    rq = (Qd[:, None] - Qb[None, :]) / (sqd[:, None] + sqb[None, :])
    nrm = np.hypot(rk, rq)
    i, j = np.unravel_index(np.argmin(nrm), nrm.shape)
    x = np.array([ds[i], bs[j]])
    if not refine:
        return x

    def obj(v):
        d, b = v
        if not (0 < d < lv.y_b and b > lv.y_s):
            return 1e3
        return float(np.linalg.norm(_system(params, costs, d, b)[0]))

    out = optimize.minimize(obj, x, method="Nelder-Mead",
                            options={"xatol": 1e-13, "fatol": 1e-16, "maxiter": 4000})
    return out.x


def solve_switching_thresholds(params: CirParams, costs: Costs,
                               single: Optional[SingleCycleSolution] = None):
    """(d~, b~, K, Q) for the repeated-switching regime."""
    single = single or solve_single_cycle(params, costs)
    if classify_regime(params, costs, single) is not Regime.REPEATED:
        raise ValueError("thresholds exist only in the Repeated regime")
    lv = cir.critical_levels(params, costs)
    box = (0.0, lv.y_b, lv.y_s)
    # starting points, cheapest first; the single-cycle pair is close when
    # re-entry is worth little (d* <= d~ < b~ <= b*)
    starts = [
        lambda: (0.5 * lv.y_b, max(1.5 * lv.y_s, single.b_star)),
        lambda: (min(single.d_star, 0.999 * lv.y_b), max(single.b_star, 1.001 * lv.y_s)),
        lambda: grid_oracle(params, costs, 2.0 * single.b_star, step=single.b_star / 500, refine=False),
        lambda: grid_oracle(params, costs, 2.0 * single.b_star, step=single.b_star / 500),
    ]
    for k, start in enumerate(starts):
        try:
            x, _ = _newton(params, costs, *start(), box)
            break
        except SolverError:
            if k == len(starts) - 1:
                raise
    d, b = float(x[0]), float(x[1])
    _, _, raw, (K, Q) = _system(params, costs, d, b)
    K, Q = float(K), float(Q)
    if not (0 < d < lv.y_b and b > lv.y_s):
        raise InvariantViolation(f"thresholds d~={d}, b~={b} outside (0, y_b) x (y_s, inf)")
    if not (K > 0 and Q > 0):
        raise InvariantViolation(f"nonpositive coefficients K={K}, Q={Q}")
    return d, b, K, Q, tuple(float(abs(v)) for v in raw)


def solve_switching(params: CirParams, costs: Costs,
                    single: Optional[SingleCycleSolution] = None) -> SwitchingSolution:
    single = single or solve_single_cycle(params, costs)
    regime = classify_regime(params, costs, single)
    if regime is Regime.NEVER_START:
        return SwitchingSolution(params, costs, regime, single)
    d, b, K, Q, res = solve_switching_thresholds(params, costs, single)
    return SwitchingSolution(params, costs, regime, single, d, b, K, Q, res)


def value_j_tilde(sol: SwitchingSolution, y):
    y = np.asarray(y, dtype=float)
    if sol.regime is Regime.NEVER_START:
        z = np.zeros(y.shape)
        return float(z) if z.shape == () else z
    p, cb = sol.params, sol.costs.c_b
    return _piecewise(y, y <= sol.d_tilde,
                      lambda x: sol.coef_K * cir.f_of(p, x) - x - cb,
                      lambda x: sol.coef_Q * cir.g_of(p, x))


def value_v_tilde(sol: SwitchingSolution, y):
    if sol.regime is Regime.NEVER_START:
        return value_v(sol.single, y)
    y = np.asarray(y, dtype=float)
    p, cs = sol.params, sol.costs.c_s
    return _piecewise(y, y < sol.b_tilde,
                      lambda x: sol.coef_K * cir.f_of(p, x),
                      lambda x: sol.coef_Q * cir.g_of(p, x) + x - cs)


def thresholds_of(sol: SwitchingSolution) -> tuple:
    if sol.regime is Regime.NEVER_START:
        return (sol.single.b_star,)
    return (sol.d_tilde, sol.b_tilde)


# ---------------------------------------------------------------- VI checks

@dataclass
class VIReport:
    tol: float
    n_points: int
    max_residual_j: float
    max_residual_v: float
    worst: list = field(default_factory=list)  # (region, which, y, residual) per region
    max_pasting: float = 0.0  # worst relative derivative jump at a threshold

    @property
    def max_residual(self) -> float:
        return max(self.max_residual_j, self.max_residual_v, self.max_pasting)

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tol


def check_variational_inequalities(j: Callable, v: Callable, params: CirParams, costs: Costs,
                                   grid: Sequence[float], thresholds: Sequence[float] = (),
                                   tol: float = 1e-6, step: float = 2e-2) -> VIReport:
    """Evaluate both min-expressions on a grid and report the worst violations.

    Each expression must vanish; residuals are scaled by max(1, |value|).
    Derivatives come from five-point stencils with spacing
    ``step / (kappa + (1 + b)/y)``: F varies on the scale 1/kappa and G, near 0,
    like y^(1-b).  Points whose stencil would reach a threshold are dropped;
    there the value functions must instead be C^1, so the jump between
    one-sided derivatives is reported as ``max_pasting``.
    """
    y = np.asarray(grid, dtype=float)
    y = y[y > 0]
    h = step / (params.kappa + (1.0 + params.b) / y)
    keep = np.ones(y.shape, dtype=bool)
    for t in thresholds:
        keep &= np.abs(y - t) > 1e-6 + 3.0 * h
    keep &= y - 2.0 * h > 0
    y, h = y[keep], h[keep]
    J = np.asarray(j(y), dtype=float)
    V = np.asarray(v(y), dtype=float)
    gj = -_generator_5pt(params, j, y, h, J)  # rJ - LJ
    gv = -_generator_5pt(params, v, y, h, V)
    ej = np.minimum(gj, J - (V - y - costs.c_b)) / np.maximum(1.0, np.abs(J))
    ev = np.minimum(gv, V - (J + y - costs.c_s)) / np.maximum(1.0, np.abs(V))

    edges = [0.0, *sorted(thresholds), math.inf]
    worst = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        m = (y > lo) & (y < hi)
        if not m.any():
            continue
        for name, e in (("J", ej), ("V", ev)):
            k = np.argmax(np.abs(e[m]))
            worst.append(((lo, hi), name, float(y[m][k]), float(e[m][k])))
    paste = 0.0
    for t in thresholds:
        hp = 1e-4 / (params.kappa + (1.0 + params.b) / t)
        for name, u in (("J", j), ("V", v)):
            jump = _derivative_jump(u, t, hp)
            worst.append(((t, t), name, float(t), jump))
            paste = max(paste, abs(jump))
    return VIReport(tol, int(y.size),
                    float(np.max(np.abs(ej))) if y.size else 0.0,
                    float(np.max(np.abs(ev))) if y.size else 0.0, worst, paste)


def _derivative_jump(u, t, h):
    """Right minus left derivative at t, over max(1, |u'|).

    Each side extrapolates a quadratic through three points strictly on that
    side, so a value mismatch at t of solver-residual size does not show up.
    """
    k = np.array([1.0, 2.0, 3.0])
    lo = np.asarray(u(t - k * h), dtype=float)
    hi = np.asarray(u(t + k * h), dtype=float)
    left = (5 * lo[0] - 8 * lo[1] + 3 * lo[2]) / (2 * h)
    right = -(5 * hi[0] - 8 * hi[1] + 3 * hi[2]) / (2 * h)
    return float((right - left) / max(1.0, abs(left), abs(right)))


def _generator_5pt(params, u, y, h, u0):
    """(L - r) u from fourth-order central differences."""
    p1, m1 = np.asarray(u(y + h), dtype=float), np.asarray(u(y - h), dtype=float)
    p2, m2 = np.asarray(u(y + 2 * h), dtype=float), np.asarray(u(y - 2 * h), dtype=float)
    d1 = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
    d2 = (16.0 * (p1 + m1) - (p2 + m2) - 30.0 * u0) / (12.0 * h * h)
    return 0.5 * params.sigma ** 2 * y * d2 + params.mu * (params.theta - y) * d1 - params.r * u0


def check_solution(sol: SwitchingSolution, n: int = 2000, tol: float = 1e-6) -> VIReport:
    """VI check of a solved instance on n points over (0, 3 x top threshold]."""
    top = max(thresholds_of(sol))
    grid = np.linspace(3.0 * top / n, 3.0 * top, n)
    return check_variational_inequalities(
        lambda y: value_j_tilde(sol, y), lambda y: value_v_tilde(sol, y),
        sol.params, sol.costs, grid, thresholds_of(sol), tol)


def candidate_from_thresholds(params: CirParams, costs: Costs, d: float, b: float):
    """Value pair built from arbitrary thresholds d < b.

    K and Q are chosen so both functions are continuous at their threshold;
    smooth fit is not imposed, so only the optimal pair satisfies the VIs.
    Returns (j, v) callables.
    """
    if not 0 < d < b:
        raise ValueError("need 0 < d < b")
    Fd, Gd = float(cir.f_of(params, d)), float(cir.g_of(params, d))
    Fb, Gb = float(cir.f_of(params, b)), float(cir.g_of(params, b))
    # K F(d) - Q G(d) = d + c_b ;  K F(b) - Q G(b) = b - c_s
    K, Q = np.linalg.solve([[Fd, -Gd], [Fb, -Gb]], [d + costs.c_b, b - costs.c_s])

    def j(y):
        y = np.asarray(y, dtype=float)
        return _piecewise(y, y <= d, lambda x: K * cir.f_of(params, x) - x - costs.c_b,
                          lambda x: Q * cir.g_of(params, x))

    def v(y):
        y = np.asarray(y, dtype=float)
        return _piecewise(y, y < b, lambda x: K * cir.f_of(params, x),
                          lambda x: Q * cir.g_of(params, x) + x - costs.c_s)

    return j, v
