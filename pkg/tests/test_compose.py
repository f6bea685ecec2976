import math

import numpy as np
import pytest

from apkam.apseries import (AnalyticityWindow, APSeries2, compose,
                            invert_near_identity)
from apkam.errors import CompositionDomain, ContractionFailure
from apkam.multiindex import ZERO, MultiIndex
from series_helpers import random_series2

SRC = AnalyticityWindow(0.5, 0.05)
TGT = AnalyticityWindow(0.4, 0.04)


def small_pair(ctx, rng, scale=1e-4):
    u = random_series2(ctx, rng, n_modes=4, degree=1, scale=scale, max_weight=4)
    v = random_series2(ctx, rng, n_modes=4, degree=1, scale=scale, max_weight=4)
    return u, v


def test_compose_with_zero_shift(ctx):
    rng = np.random.default_rng(0)
    f = random_series2(ctx, rng)
    zero = APSeries2.zero(ctx)
    h = compose(f, zero, zero, SRC, TGT)
    assert (h - f).norm(TGT) <= 1e-13 * f.norm(TGT)


def test_compose_linear_in_y(ctx):
    # f = y: shifting y by a constant adds the constant
    f = APSeries2(ctx, {ZERO: [ctx.alpha, 1.0]})  # f(x, y) = y
    u = APSeries2.cosine(ctx, MultiIndex.unit(1), 1e-4)
    c = 2e-3
    v = APSeries2.constant(ctx, c)
    h = compose(f, u, v, SRC, TGT)
    expect = APSeries2(ctx, {ZERO: [ctx.alpha + c, 1.0]})
    assert (h - expect).norm(TGT) < 1e-15


def test_compose_pointwise_oracle(ctx):
    rng = np.random.default_rng(1)
    xs = rng.uniform(-8, 8, size=20)
    y = ctx.alpha + 0.01
    for _ in range(5):
        f = random_series2(ctx, rng, n_modes=6, degree=2, max_weight=6)
        u, v = small_pair(ctx, rng)
        h = compose(f, u, v, SRC, TGT)
        lhs = h.evaluate(xs, y)
        ux = u.evaluate(xs, y)
        vx = v.evaluate(xs, y)
        rhs = np.array([f.evaluate(float(x + du), float(y + dv))
                        for x, du, dv in zip(xs, ux, vx)])
        assert np.max(np.abs(lhs - rhs)) < 1e-8


def test_compose_norm_inequality(ctx):
    rng = np.random.default_rng(2)
    for _ in range(10):
        f = random_series2(ctx, rng, n_modes=8, degree=2)
        u, v = small_pair(ctx, rng)
        eps = u.norm(SRC) + v.norm(SRC)
        h = compose(f, u, v, SRC, TGT)
        bound = f.norm(SRC) * math.exp(eps + (TGT.s + eps) / SRC.s) \
            + h.trunc.at(TGT)
        assert h.norm(TGT) <= bound * (1 + 1e-12)


def test_compose_domain_guard(ctx):
    f = random_series2(ctx, np.random.default_rng(3))
    big = APSeries2.constant(ctx, 0.5)  # larger than min(r-r', s-s') = 0.01
    with pytest.raises(CompositionDomain):
        compose(f, big, APSeries2.zero(ctx), SRC, TGT)


def test_invert_zero(ctx):
    zero = APSeries2.zero(ctx)
    ui, vi = invert_near_identity(zero, zero, SRC, (0.1, 0.01))
    assert ui.is_zero and vi.is_zero


def test_invert_constant_translation(ctx):
    c = 1e-4
    u = APSeries2.constant(ctx, c)
    v = APSeries2.zero(ctx)
    ui, vi = invert_near_identity(u, v, SRC, (0.1, 0.01))
    assert ui.mean()[0] == pytest.approx(-c, rel=1e-10)
    assert vi.is_zero


def test_invert_round_trip_pointwise(ctx):
    rng = np.random.default_rng(4)
    xs = rng.uniform(-5, 5, size=20)
    y = ctx.alpha + 0.005
    for _ in range(5):
        u, v = small_pair(ctx, rng)
        ui, vi = invert_near_identity(u, v, SRC, (0.1, 0.01))
        x1 = xs + u.evaluate(xs, np.full_like(xs, y))
        y1 = y + v.evaluate(xs, np.full_like(xs, y))
        x2 = x1 + ui.evaluate(x1, y1)
        y2 = y1 + vi.evaluate(x1, y1)
        assert np.max(np.abs(x2 - xs)) < 1e-10
        assert np.max(np.abs(y2 - y)) < 1e-10


def test_invert_norm_bound(ctx):
    rng = np.random.default_rng(5)
    u, v = small_pair(ctx, rng)
    eps = u.norm(SRC) + v.norm(SRC)
    ui, vi = invert_near_identity(u, v, SRC, (0.1, 0.01))
    tgt = SRC.shrink(0.1, 0.01)
    assert ui.norm(tgt) + vi.norm(tgt) <= eps * (1 + 1e-10)


def test_invert_contraction_guard(ctx):
    u = APSeries2.constant(ctx, 0.3)
    v = APSeries2.zero(ctx)
    with pytest.raises(ContractionFailure):
        invert_near_identity(u, v, SRC, (0.01, 0.001))
