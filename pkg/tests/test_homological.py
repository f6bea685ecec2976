import numpy as np
import pytest

from apkam.apseries import AnalyticityWindow, APSeries2
from apkam.errors import MeanNotZero, SmallDivisorBreakdown
from apkam.homological import solve_difference, solve_modified_system
from apkam.multiindex import MultiIndex
from series_helpers import random_series2

R, RP = 0.5, 0.4


def mean_zero_random(ctx, rng, **kw):
    f = random_series2(ctx, rng, **kw)
    return f.subtract_mean()


def test_zero_rhs(ctx):
    s, rep = solve_difference(APSeries2.zero(ctx), ctx, R, RP)
    assert s.is_zero and rep.residual == 0.0


def test_single_mode_closed_form(ctx):
    e1 = MultiIndex.unit(1)
    h = APSeries2(ctx, {e1: [1.0]})
    s, rep = solve_difference(h, ctx, R, RP)
    expect = 1.0 / (np.exp(1j * ctx.inner(e1) * ctx.alpha) - 1.0)
    assert s.terms[e1][0] == pytest.approx(expect)
    assert rep.residual <= 1e-15
    # shifted-series residual vanishes identically for a single mode
    lit = (s.shift_x(ctx.alpha) - s - h).norm(AnalyticityWindow(RP, 1.0))
    assert lit < 1e-15


def test_mean_not_zero(ctx):
    with pytest.raises(MeanNotZero):
        solve_difference(APSeries2.constant(ctx, 1.0), ctx, R, RP)


def test_solution_mean_zero_and_unique(ctx):
    rng = np.random.default_rng(0)
    h = mean_zero_random(ctx, rng)
    s1, _ = solve_difference(h, ctx, R, RP)
    s2, _ = solve_difference(h, ctx, R, RP)
    assert np.all(s1.mean() == 0)
    # the coefficient formula determines the solution
    assert set(s1.terms) == set(s2.terms)
    for l in s1.terms:
        assert np.array_equal(s1.terms[l], s2.terms[l])


def test_linearity(ctx):
    rng = np.random.default_rng(1)
    h1 = mean_zero_random(ctx, rng)
    h2 = mean_zero_random(ctx, rng)
    s1, _ = solve_difference(h1, ctx, R, RP)
    s2, _ = solve_difference(h2, ctx, R, RP)
    s12, _ = solve_difference(h1.scale(2.0) + h2.scale(-0.5), ctx, R, RP)
    diff = (s12 - (s1.scale(2.0) + s2.scale(-0.5))).norm(
        AnalyticityWindow(RP, 1.0))
    assert diff <= 1e-13 * (s1.norm(AnalyticityWindow(RP, 1.0))
                            + s2.norm(AnalyticityWindow(RP, 1.0)))


def test_norm_estimate_mu_one(ctx):
    rng = np.random.default_rng(2)
    for _ in range(10):
        h = mean_zero_random(ctx, rng)
        s, rep = solve_difference(h, ctx, R, RP)
        assert rep.bound_ok
        assert rep.solution_norm <= rep.bound


def test_divisor_floor(ctx):
    e1 = MultiIndex.unit(1)
    h = APSeries2(ctx, {e1: [1.0]})
    with pytest.raises(SmallDivisorBreakdown):
        solve_difference(h, ctx, R, RP, divisor_floor=10.0)


def test_modified_system_zero(ctx):
    z = APSeries2.zero(ctx)
    u, v, mv, rep = solve_modified_system(z, z, ctx, R, 0.1)
    assert u.is_zero and v.is_zero and np.all(mv == 0)


def test_modified_system_single_mode(ctx):
    e1 = MultiIndex.unit(1)
    f = APSeries2.zero(ctx)
    g = APSeries2(ctx, {e1: [1.0]})
    u, v, mv, rep = solve_modified_system(f, g, ctx, R, 0.1)
    d = np.exp(1j * ctx.inner(e1) * ctx.alpha) - 1.0
    assert v.terms[e1][0] == pytest.approx(1.0 / d)
    # u solves u(xi+alpha) - u = v with the same closed form again
    assert u.terms[e1][0] == pytest.approx(1.0 / d / d)
    assert rep.residual <= 1e-14


def test_modified_system_mean_bookkeeping(ctx):
    rng = np.random.default_rng(3)
    g = mean_zero_random(ctx, rng)
    c = 0.37
    f = APSeries2.constant(ctx, c)
    u, v, mv, rep = solve_modified_system(f, g, ctx, R, 0.1)
    assert mv[0] == pytest.approx(-c)
    assert v.mean()[0] == pytest.approx(-c)
    assert rep.mean_bound_ok  # ||[v]|| <= ||f||


def test_modified_system_equations_hold_pointwise(ctx):
    rng = np.random.default_rng(4)
    f = random_series2(ctx, rng, n_modes=6, max_weight=6)
    g = random_series2(ctx, rng, n_modes=6, max_weight=6)
    u, v, mv, rep = solve_modified_system(f, g, ctx, R, 0.1)
    xs = rng.uniform(0, 20, size=12)
    y = ctx.alpha + 0.02
    a = ctx.alpha
    lhs1 = u.evaluate(xs + a, y) - u.evaluate(xs, y)
    rhs1 = v.evaluate(xs, y) + f.evaluate(xs, y)
    assert np.max(np.abs(lhs1 - rhs1)) < 1e-11
    gm = g.mean()
    lhs2 = v.evaluate(xs + a, y) - v.evaluate(xs, y)
    rhs2 = g.evaluate(xs, y) - np.real(np.polyval(gm[::-1], y - a))
    assert np.max(np.abs(lhs2 - rhs2)) < 1e-11
