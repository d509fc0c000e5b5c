import math
import warnings

import numpy as np
import pytest
from scipy import integrate, stats

from cirswitch import cir
from cirswitch.cir import CirParams, Costs
from cirswitch.errors import CensoringWarning, DomainError
from cirswitch.montecarlo import (
    SimConfig, hitting_closed_form, hitting_functional, martingale_check, simulate_path,
    simulate_terminal, value_single_policy, value_switching_policy)
from cirswitch.single_cycle import solve_single_cycle, value_j, value_v
from cirswitch.switching import solve_switching, value_j_tilde

BASE = CirParams(mu=0.2, theta=0.2, sigma=0.3, r=0.05)
FAST = CirParams(mu=0.6, theta=0.2, sigma=0.15, r=0.05)
COSTS = Costs(0.001, 0.001)


def cir_mean_var(p, y0, t):
    e = math.exp(-p.mu * t)
    mean = p.theta + (y0 - p.theta) * e
    var = (y0 * p.sigma ** 2 / p.mu * (e - e * e)
           + p.theta * p.sigma ** 2 / (2 * p.mu) * (1 - e) ** 2)
    return mean, var


@pytest.mark.parametrize("p", [BASE, FAST])
@pytest.mark.parametrize("scheme,dt", [("exact", 0.5), ("euler", 0.002)])
def test_terminal_moments(p, scheme, dt):
    y0, t, n = 0.15, 2.0, 40_000
    yt = simulate_terminal(p, y0, t, SimConfig(dt=dt, n_paths=n, seed=3, scheme=scheme))
    mean, var = cir_mean_var(p, y0, t)
    assert abs(yt.mean() - mean) <= 4 * math.sqrt(var / n)
    # sample variance of a skewed variable: compare loosely
    assert yt.var() == pytest.approx(var, rel=0.05)


@pytest.mark.parametrize("p", [BASE, FAST])
def test_exact_scheme_matches_noncentral_chi_square(p):
    y0, t = 0.15, 1.3
    yt = simulate_terminal(p, y0, t, SimConfig(dt=0.1, n_paths=20_000, seed=5))
    c = p.sigma ** 2 * (1 - math.exp(-p.mu * t)) / (4 * p.mu)
    df, nc = 4 * p.mu * p.theta / p.sigma ** 2, y0 * math.exp(-p.mu * t) / c
    res = stats.kstest(yt / c, stats.ncx2(df, nc).cdf)
    assert res.pvalue > 1e-3


def test_positivity_of_both_schemes():
    for scheme in ("exact", "euler"):
        cfg = SimConfig(dt=0.01, horizon=20.0, seed=1, scheme=scheme)
        t, y = simulate_path(BASE, 0.01, cfg)
        assert y[0] == 0.01 and np.all(y >= 0)
        assert len(t) == len(y) == 2001
        assert t[-1] == pytest.approx(20.0)
    yt = simulate_terminal(BASE, 0.0, 0.5, SimConfig(dt=0.5, n_paths=5000))
    assert np.all(yt >= 0) and yt.mean() > 0


def test_determinism_across_thread_counts():
    base = dict(dt=0.05, n_paths=12_000, batch_size=1000, seed=11)
    a = simulate_terminal(BASE, 0.15, 1.0, SimConfig(jobs=1, **base))
    b = simulate_terminal(BASE, 0.15, 1.0, SimConfig(jobs=4, **base))
    np.testing.assert_array_equal(a, b)
    c = simulate_terminal(BASE, 0.15, 1.0, SimConfig(jobs=4, **{**base, "seed": 12}))
    assert not np.array_equal(a, c)
    _, p1 = simulate_path(BASE, 0.15, SimConfig(dt=0.01, horizon=5.0, seed=2))
    _, p2 = simulate_path(BASE, 0.15, SimConfig(dt=0.01, horizon=5.0, seed=2))
    np.testing.assert_array_equal(p1, p2)


def test_euler_and_exact_agree_on_the_mean():
    y0, t, n = 0.05, 1.0, 40_000
    ex = simulate_terminal(BASE, y0, t, SimConfig(dt=0.5, n_paths=n, seed=7))
    eu = simulate_terminal(BASE, y0, t, SimConfig(dt=1e-3, n_paths=n, seed=8, scheme="euler"))
    se = math.hypot(ex.std(), eu.std()) / math.sqrt(n)
    assert abs(ex.mean() - eu.mean()) <= 4 * se


def expect_discounted(p, fn, y0, t):
    """E[e^{-rt} fn(Y_t)] by quadrature against the noncentral chi-square law."""
    c = p.sigma ** 2 * (1 - math.exp(-p.mu * t)) / (4 * p.mu)
    law = stats.ncx2(4 * p.mu * p.theta / p.sigma ** 2, y0 * math.exp(-p.mu * t) / c)
    pts = [law.ppf(q) for q in (1e-6, 0.01, 0.5, 0.99)]
    val, _ = integrate.quad(lambda x: float(fn(p, c * x)) * law.pdf(x), 0.0, law.ppf(1 - 1e-14),
                            points=pts, limit=400, epsabs=0, epsrel=1e-11)
    return math.exp(-p.r * t) * val


# horizons keep 1 - e^{-mu t} < 1/4 so F(Y_t) has the moments the s.e. needs
@pytest.mark.parametrize("p,y0,t", [(BASE, 0.15, 1.0), (BASE, 0.02, 1.0), (FAST, 0.25, 0.4)])
def test_discounted_f_is_a_martingale(p, y0, t):
    rep = martingale_check(p, y0, t, SimConfig(dt=0.5, n_paths=40_000, seed=4))
    assert rep.f_mc.within(rep.f_target), rep
    assert expect_discounted(p, cir.f_of, y0, t) == pytest.approx(rep.f_target, rel=1e-8)


def test_discounted_g_is_a_martingale_under_feller():
    rep = martingale_check(FAST, 0.25, 0.4, SimConfig(dt=0.5, n_paths=40_000, seed=4))
    assert rep.passed, rep


def test_discounted_g_loses_value_at_a_reflecting_zero():
    p, y0, t = BASE, 0.02, 1.0
    rep = martingale_check(p, y0, t, SimConfig(dt=0.5, n_paths=40_000, seed=6))
    exact = expect_discounted(p, cir.g_of, y0, t)
    assert rep.g_mc.within(exact)
    assert exact < 0.95 * rep.g_target
    assert not rep.g_mc.within(rep.g_target)
    # visits to 0 are rare over a short horizon from 0.15: the deficit is invisible
    short = martingale_check(p, 0.15, 0.25, SimConfig(dt=0.5, n_paths=40_000, seed=6))
    assert short.passed, short
    zero = martingale_check(p, y0, 0.0, SimConfig(n_paths=10))
    assert zero.f_mc.estimate == pytest.approx(zero.f_target)


def test_hitting_closed_form_limits():
    lo, hi = hitting_closed_form(BASE, 0.1, 0.1, 0.3)
    assert lo == pytest.approx(1.0) and hi == pytest.approx(0.0, abs=1e-12)
    lo, hi = hitting_closed_form(BASE, 0.3, 0.1, 0.3)
    assert lo == pytest.approx(0.0, abs=1e-12) and hi == pytest.approx(1.0)
    # level 0 is never reached under the Feller condition
    lo, hi = hitting_closed_form(FAST, 0.1, 0.0, 0.3)
    assert lo == 0.0 and hi == pytest.approx(cir.f_of(FAST, 0.1) / cir.f_of(FAST, 0.3))
    with pytest.raises(DomainError):
        hitting_closed_form(BASE, 0.5, 0.1, 0.3)


@pytest.mark.parametrize("p,y0,a,b", [(BASE, 0.15, 0.1, 0.25), (BASE, 0.2, 0.05, 0.4),
                                       (FAST, 0.1, 0.0, 0.3)])
def test_hitting_functional_matches_closed_form(p, y0, a, b):
    cfg = SimConfig(dt=0.002, n_paths=20_000, seed=9)
    mc_lo, mc_hi = hitting_functional(p, y0, a, b, cfg)
    lo, hi = hitting_closed_form(p, y0, a, b)
    assert mc_lo.within(lo) and mc_hi.within(hi)


def test_start_next_to_a_barrier():
    # y0 is within one step's standard deviation (0.0049) of b
    y0, a, b = 0.298, 0.1, 0.3
    cfg = SimConfig(dt=0.002, n_paths=20_000, seed=14)
    mc_lo, mc_hi = hitting_functional(BASE, y0, a, b, cfg)
    lo, hi = hitting_closed_form(BASE, y0, a, b)
    assert 0 < mc_hi.estimate < 1 and mc_hi.std_error > 0
    assert mc_lo.within(lo) and mc_hi.within(hi)
    s = solve_single_cycle(BASE, COSTS)
    v = value_single_policy(BASE, COSTS, s.b_star - 1e-3, None, s.b_star,
                            SimConfig(dt=0.01, n_paths=20_000, seed=15))
    assert v.within(value_v(s, s.b_star - 1e-3))


def test_hitting_bias_shrinks_with_dt():
    # without the bridge test, discrete monitoring sees crossings late;
    # the bias is O(sqrt(dt)), so refining dt by 16 must cut it several-fold
    y0, a, b = 0.15, 0.1, 0.2
    lo, hi = hitting_closed_form(BASE, y0, a, b)
    errs = []
    for dt in (0.04, 0.0025):
        cfg = SimConfig(dt=dt, n_paths=20_000, seed=13, bridge=False, adaptive=False)
        mc_lo, mc_hi = hitting_functional(BASE, y0, a, b, cfg)
        errs.append(abs(mc_lo.estimate + mc_hi.estimate - lo - hi))
    assert errs[1] < 0.5 * errs[0]


def test_stopping_and_single_cycle_values():
    s = solve_single_cycle(BASE, COSTS)
    cfg = SimConfig(dt=0.01, n_paths=20_000, seed=21)
    v = value_single_policy(BASE, COSTS, 0.15, None, s.b_star, cfg)
    assert v.within(value_v(s, 0.15)) and v.n_censored == 0
    j = value_single_policy(BASE, COSTS, 0.15, s.d_star, s.b_star, cfg)
    assert j.within(value_j(s, 0.15))
    assert j.truncation_bound < j.std_error


def test_switching_value():
    sol = solve_switching(BASE, COSTS)
    cfg = SimConfig(dt=0.01, n_paths=10_000, seed=22)
    jt = value_switching_policy(BASE, COSTS, 0.15, sol.d_tilde, sol.b_tilde, cfg)
    assert jt.within(value_j_tilde(sol, 0.15))
    assert jt.mean_cycles > 1
    # horizon 200 leaves e^{-200 r} of the value unaccounted for
    assert jt.truncation_bound < 0.05 * jt.std_error


def test_one_cycle_cap_reproduces_the_single_policy():
    sol = solve_switching(BASE, COSTS)
    cfg = SimConfig(dt=0.02, n_paths=3000, seed=23)
    single = value_single_policy(BASE, COSTS, 0.15, sol.d_tilde, sol.b_tilde, cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CensoringWarning)
        capped = value_switching_policy(BASE, COSTS, 0.15, sol.d_tilde, sol.b_tilde, cfg,
                                        n_cycles_cap=1)
    assert capped.estimate == single.estimate
    assert capped.mean_cycles <= 1


def test_censoring_is_reported():
    s = solve_single_cycle(BASE, COSTS)
    cfg = SimConfig(dt=0.01, horizon=0.5, n_paths=2000, seed=24)
    with pytest.warns(CensoringWarning):
        v = value_single_policy(BASE, COSTS, 0.15, s.d_star, s.b_star, cfg)
    assert v.n_censored > 0 and v.truncation_bound > 0


def test_argument_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0.0)
    with pytest.raises(ValueError):
        SimConfig(scheme="milstein")
    with pytest.raises(ValueError):
        SimConfig(n_paths=1)
    assert SimConfig.for_params(BASE).dt == pytest.approx(5e-3)
    cfg = SimConfig(n_paths=100)
    with pytest.raises(DomainError):
        simulate_path(BASE, -0.1, cfg)
    with pytest.raises(DomainError):
        hitting_functional(BASE, 0.5, 0.1, 0.3, cfg)
    with pytest.raises(DomainError, match="reflecting"):
        hitting_functional(BASE, 0.1, 0.0, 0.3, cfg)
    with pytest.raises(ValueError):
        value_single_policy(BASE, COSTS, 0.15, 0.3, 0.2, cfg)
    with pytest.raises(ValueError):
        value_switching_policy(BASE, COSTS, 0.15, 0.3, 0.2, cfg)
