import math
import warnings

import numpy as np
import pytest

from apkam.apseries import AnalyticityWindow, APSeries1, APSeries2
from apkam.errors import (CompositionDomain, ConditionViolation,
                          ContractionFailure, NoConvergence,
                          ResidualCheckFailed)
from apkam.fixtures import intro_map
from apkam.kam import (InvariantCurve, KAMSchedule, fit_contraction_exponent,
                       kam_iterate, kam_step, orbit_shadow_check,
                       verify_conjugacy)
from apkam.multiindex import MultiIndex
from apkam.twistmap import TwistMap


def test_zero_map_trivial(ctx):
    m = TwistMap(APSeries2.zero(ctx), APSeries2.zero(ctx), ctx)
    curve = kam_iterate(m, ctx, mode="practical")
    assert curve.stage_log == []
    assert curve.conjugacy_residual == 0.0
    assert verify_conjugacy(curve, m) == 0.0
    # exact up to the float accumulation of x <- x + y over the iterates
    assert orbit_shadow_check(curve, m, x0_count=3, n_iterates=50) < 1e-12


def test_single_mode_step_quadratic(ctx, single):
    sched = KAMSchedule(r0=0.5, s0=1e-4, eps0=single.eps())
    window = AnalyticityWindow(0.5, 1e-4)
    target = AnalyticityWindow(0.25, 3e-5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        transform, fp, gp, est = kam_step(single.f, single.g, ctx, window,
                                          target, sched)
    assert est.eps_out < 1e-2 * est.eps_in
    assert math.isfinite(est.Q)
    assert est.eps_out <= est.Q
    assert est.conj_defect <= 1e-9
    assert est.fix_iters <= 10
    # transform actually solves the homological system
    assert transform.u.n_terms > 0 and transform.v.n_terms > 0


def test_mean_trap_h_bound(ctx):
    eps = 1e-6
    g = APSeries2.cosine(ctx, MultiIndex.unit(1), eps) \
        + APSeries2.constant(ctx, eps ** 2)
    f = APSeries2.zero(ctx)
    sched = KAMSchedule(r0=0.5, s0=1e-4, eps0=eps)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, _, gp, est = kam_step(f, g, ctx, AnalyticityWindow(0.5, 1e-4),
                                 AnalyticityWindow(0.25, 3e-5), sched)
    assert est.h_coeffs[0] == pytest.approx(eps ** 2)
    assert est.h_bound_ok  # |h(eta)| <= 3Q
    assert est.intersection_root


def test_kam_iterate_intro(ctx, intro, kam_curve):
    assert kam_curve.conjugacy_residual < 1e-10
    assert len(kam_curve.stage_log) <= 6
    # independent re-verification with a different sampling
    res = verify_conjugacy(kam_curve, intro, n_samples=512,
                           interval_length=2000.0)
    assert res < 1e-10
    for est in kam_curve.stage_log:
        assert est.conj_defect <= 1e-9
        assert est.r_plus > 0.25  # r_n stays above r0/2
        assert est.s_plus < est.s


def test_contraction_exponent(kam_curve):
    kappa, c = fit_contraction_exponent(kam_curve.stage_log)
    assert kappa >= 1.2


def test_size_bound_shape(kam_curve, intro):
    # limit size: ||u|| + ||v - alpha|| at r0/2 stays below 4 eps0^(1/9)
    assert kam_curve.size_r_half <= 4.0 * intro.eps() ** (1.0 / 9.0)


def test_injected_error_detectable(ctx, intro, kam_curve):
    bad_u = kam_curve.u + APSeries1.cosine(ctx, MultiIndex.unit(1), 1e-3)
    bad = InvariantCurve(u=bad_u, v=kam_curve.v, alpha=kam_curve.alpha,
                         conjugacy_residual=math.nan)
    res = verify_conjugacy(bad, intro)
    assert 1e-5 < res < 1e-2


def test_orbit_shadow_converged(kam_curve, intro):
    dev = orbit_shadow_check(kam_curve, intro, x0_count=3, n_iterates=200)
    assert dev < 1e-8


def test_orbit_shadow_control(ctx, intro, kam_curve):
    # a non-invariant curve drifts visibly within 100 iterates
    bad_v = kam_curve.v + 1e-3
    bad = InvariantCurve(u=kam_curve.u, v=bad_v, alpha=kam_curve.alpha,
                         conjugacy_residual=math.nan)
    dev = orbit_shadow_check(bad, intro, x0_count=3, n_iterates=100)
    assert dev > 1e-2


def test_paper_mode_trivial(ctx):
    m = TwistMap(APSeries2.zero(ctx), APSeries2.zero(ctx), ctx)
    curve = kam_iterate(m, ctx, mode="paper", max_stage=3)
    assert curve.conjugacy_residual == 0.0


def test_paper_mode_raises_on_realistic_eps(ctx, intro):
    # the default constants require eps0 beyond double precision; honest
    # replay refuses realistic sizes
    with pytest.raises(ConditionViolation):
        kam_iterate(intro, ctx, mode="paper", max_stage=4)


def test_paper_mode_one_lawful_stage(ctx, intro):
    # with relaxed (configurable) constants every stage-1 hypothesis holds;
    # the scheduled sequence still turns at stage 2 and is refused
    eps0 = intro.eps()
    sched = KAMSchedule(r0=0.5, s0=eps0 ** (2.0 / 3.0), eps0=eps0,
                        c3=0.03, c5=0.06)
    curve = kam_iterate(intro, ctx, schedule=sched, mode="paper", max_stage=1)
    est = curve.stage_log[0]
    assert est.violated() == []
    # with the hypotheses satisfied, the recorded estimate chain holds
    assert est.u_norm + est.v_norm <= est.uv_bound
    assert est.eps_out <= est.Q
    assert est.h_bound_ok
    assert curve.conjugacy_residual < 1e-9
    assert curve.size_r_half <= 4.0 * eps0 ** (1.0 / 9.0)
    with pytest.raises(ConditionViolation):
        kam_iterate(intro, ctx, schedule=sched, mode="paper", max_stage=2)


def test_breakdown_above_threshold(ctx):
    # far above the convergence threshold the run must refuse, through
    # whichever step guard trips first
    big = intro_map(ctx, eps=5e-2)
    with pytest.raises((NoConvergence, CompositionDomain,
                        ContractionFailure, ResidualCheckFailed)):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            kam_iterate(big, ctx, mode="practical", tol_conj=1e-10,
                        max_stage=3)


def test_no_convergence_when_budget_exhausted(ctx, intro):
    with pytest.raises(NoConvergence):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            kam_iterate(intro, ctx, mode="practical", tol_conj=1e-16,
                        max_stage=1)


def test_schedule_rules():
    sched = KAMSchedule(r0=1.0, s0=0.01, eps0=1e-8)
    # delta_n = (3 r0 / pi^2) n^-2 sums to r0/2
    partial = sum(sched.delta(n) for n in range(1, 4000))
    assert partial == pytest.approx(0.5, abs=1e-3)
    assert sched.r(1) == pytest.approx(1.0 - 3.0 / math.pi ** 2)
    for n in range(1, 40):
        assert sched.r(n) > 0.5
        assert sched.r(n) < sched.r(n - 1)
    # eps_(n+1) = c7^((n+1)^4) eps_n^(4/3), s_n = eps_n^(2/3)
    assert sched.eps_paper(1) == pytest.approx(
        sched.c7 * sched.eps0 ** (4.0 / 3.0))
    assert sched.eps_paper(2) == pytest.approx(
        sched.c7 ** 16 * sched.eps_paper(1) ** (4.0 / 3.0))
    assert sched.s_paper(2) == pytest.approx(sched.eps_paper(2) ** (2.0 / 3.0))


def test_step_records_conditions(ctx, kam_curve):
    est = kam_curve.stage_log[0]
    for name in ("a_splus", "b_rho", "c_smooth", "c_s_small", "d_margin",
                 "smallness", "contraction"):
        lhs, rhs, ok = est.conditions[name]
        assert ok == (lhs < rhs)
    as_json = est.to_json()
    assert set(as_json["conditions"]) == set(est.conditions)


def test_curve_json_round_trip(ctx, kam_curve, tmp_path):
    from apkam.util import dump_json, load_json
    path = tmp_path / "curve.json"
    dump_json(kam_curve.to_json(), path)
    back = InvariantCurve.from_json(ctx, load_json(path))
    xs = np.linspace(0, 10, 7)
    assert np.allclose(back.u.evaluate(xs), kam_curve.u.evaluate(xs),
                       atol=1e-15)
    assert back.alpha == kam_curve.alpha
    assert back.conjugacy_residual == kam_curve.conjugacy_residual
