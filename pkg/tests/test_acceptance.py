"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test prints a visible PASS line with the measured quantities (or fails
with them); the conjugacy residual of the KAM run is the central functional.
Budgets are generous relative to the measured runtimes; the heavy shared
artifacts (context, intro-map run) are session fixtures.
"""

import math
import os
import time

import numpy as np

from apkam.apseries import AnalyticityWindow
from apkam.frequency import rejection_fraction, sample_frequency
from apkam.homological import solve_difference
from apkam.kam import fit_contraction_exponent, orbit_shadow_check, \
    verify_conjugacy
from apkam.fixtures import pendulum_fixture
from apkam.pendulum import (PendulumSystem, PoincareState,
                            boundedness_experiment, poincare_asymptotics,
                            poincare_map)
from series_helpers import random_series2


def test_criterion_1_homological_exactness(ctx, announce):
    """Residual and norm bound on 50 random mean-zero right-hand sides."""
    t0 = time.time()
    rng = np.random.default_rng(10)
    r, rp, s = 0.5, 0.4, 1.0
    win_out = AnalyticityWindow(rp, s)
    worst_resid = 0.0
    worst_ratio = 0.0
    for _ in range(50):
        h = random_series2(ctx, rng, n_modes=40, degree=3).subtract_mean()
        sol, rep = solve_difference(h, ctx, r, rp, s=s)
        literal = (sol.shift_x(ctx.alpha) - sol - h).norm(win_out)
        worst_resid = max(worst_resid, literal / rep.rhs_norm)
        assert rep.bound_ok and rep.solution_norm <= rep.bound
        worst_ratio = max(worst_ratio, rep.solution_norm / rep.bound)
    elapsed = time.time() - t0
    assert worst_resid < 1e-12
    assert elapsed < 10.0
    announce(f"CRITERION 1 PASS: max relative residual {worst_resid:.2e} "
             f"< 1e-12, norm within the divisor-growth bound (worst ratio "
             f"{worst_ratio:.2e}), {elapsed:.1f}s < 10s")


def test_criterion_2_norm_algebra(ctx, announce):
    """Submultiplicativity, triangle, and both Cauchy estimates, 100x each."""
    t0 = time.time()
    rng = np.random.default_rng(11)
    w = AnalyticityWindow(0.5, 0.3)
    for _ in range(100):
        f = random_series2(ctx, rng, n_modes=8, degree=3)
        g = random_series2(ctx, rng, n_modes=8, degree=3)
        prod = f.mul(g)
        assert prod.norm(w) <= f.norm(w) * g.norm(w) + prod.trunc.at(w) \
            + 1e-15
        assert (f + g).norm(w) <= (f.norm(w) + g.norm(w)) * (1 + 1e-12)
        assert f.dx().norm(AnalyticityWindow(0.4, w.s)) \
            <= f.norm(AnalyticityWindow(0.5, w.s)) / 0.1 * (1 + 1e-12)
        assert f.dy().norm(AnalyticityWindow(w.r, 0.2)) \
            <= f.norm(AnalyticityWindow(w.r, 0.3)) / 0.1 * (1 + 1e-12)
    elapsed = time.time() - t0
    assert elapsed < 30.0
    announce(f"CRITERION 2 PASS: norm algebra inequalities on 100 random "
             f"pairs, {elapsed:.1f}s < 30s")


def test_criterion_3_composition_inversion(ctx, announce):
    """Forward-then-inverse identity for 50 random admissible pairs."""
    from apkam.apseries import invert_near_identity
    t0 = time.time()
    rng = np.random.default_rng(12)
    src = AnalyticityWindow(0.5, 0.05)
    tgt = src.shrink(0.1, 0.01)
    worst = 0.0
    for _ in range(50):
        u = random_series2(ctx, rng, n_modes=2, degree=1, scale=1e-4,
                           max_weight=3)
        v = random_series2(ctx, rng, n_modes=2, degree=1, scale=1e-4,
                           max_weight=3)
        eps = u.norm(src) + v.norm(src)
        ui, vi = invert_near_identity(u, v, src, (0.1, 0.01))
        assert ui.norm(tgt) + vi.norm(tgt) <= eps * (1 + 1e-10)
        xs = rng.uniform(-6, 6, 20)
        y = ctx.alpha + 0.004
        x1 = xs + u.evaluate(xs, np.full_like(xs, y))
        y1 = y + v.evaluate(xs, np.full_like(xs, y))
        x2 = x1 + ui.evaluate(x1, y1)
        y2 = y1 + vi.evaluate(x1, y1)
        dev = max(float(np.max(np.abs(x2 - xs))),
                  float(np.max(np.abs(y2 - y))))
        worst = max(worst, dev)
    elapsed = time.time() - t0
    assert worst < 1e-10
    assert elapsed < 60.0
    announce(f"CRITERION 3 PASS: round-trip deviation {worst:.2e} < 1e-10 "
             f"on 50 pairs, {elapsed:.1f}s < 60s")


def test_criterion_4_kam_end_to_end(ctx, intro, kam_curve, announce):
    """Practical-mode convergence on the intro fixture at eps = 1e-6."""
    t0 = time.time()
    residual = verify_conjugacy(kam_curve, intro, n_samples=256)
    assert residual < 1e-10
    deviation = orbit_shadow_check(kam_curve, intro, x0_count=4,
                                   n_iterates=1000)
    assert deviation < 1e-6
    # restricted rotation: the x-coordinate tracks xi0 + n*alpha + u
    elapsed = time.time() - t0
    announce(f"CRITERION 4 PASS: residual {residual:.2e} < 1e-10 in "
             f"{len(kam_curve.stage_log)} stages, shadow deviation "
             f"{deviation:.2e} < 1e-6 over 1000 iterates "
             f"(+{elapsed:.0f}s check)")


def test_criterion_5_contraction_exponent(kam_curve, announce):
    kappa, c = fit_contraction_exponent(kam_curve.stage_log)
    assert kappa >= 1.2
    announce(f"CRITERION 5 PASS: fitted contraction exponent {kappa:.3f} "
             f">= 1.2 over {len(kam_curve.stage_log)} stages")


def test_criterion_6_diophantine_sampler(announce):
    t0 = time.time()
    ctx = sample_frequency(4, rng_seed=0, max_attempts=10)
    assert ctx.diophantine_margin() > 0.0
    gammas = (1e-4, 1e-3, 1e-2)
    trials = 20_000
    fracs = [rejection_fraction(g, trials=trials, rng_seed=123)
             for g in gammas]
    floor = 3.0 / trials
    for (g1, f1), (g2, f2) in zip(zip(gammas, fracs), zip(gammas[1:],
                                                          fracs[1:])):
        assert f2 <= 3.0 * (g2 / g1) * max(f1, floor)
    elapsed = time.time() - t0
    assert elapsed < 60.0
    announce(f"CRITERION 6 PASS: accepted within 10 attempts (seed 0); "
             f"rejection fractions {[f'{f:.4f}' for f in fracs]} for "
             f"gamma0 = {list(gammas)} grow at most linearly (factor 3), "
             f"{elapsed:.1f}s < 60s")


def test_criterion_7_poincare_asymptotics(ctx, announce):
    t0 = time.time()
    sys_mod = pendulum_fixture(ctx, "modulated")
    res = poincare_asymptotics(sys_mod, np.geomspace(100.0, 10000.0, 9),
                               tol=1e-12)
    assert abs(res["twist_exponent"] - (-1.5)) <= 0.25
    assert abs(res["action_exponent"] - (-0.5)) <= 0.25
    # integrable closed form
    from apkam.apseries import APSeries1
    zero = APSeries1.zero(ctx)
    sys_free = PendulumSystem(modes={1: zero, -1: zero}, p=zero, ctx=ctx)
    rho = 1000.0
    nxt = poincare_map(sys_free, PoincareState(0.3, rho), tol=1e-13)
    defect = abs(nxt.theta - 0.3 - 2.0 * math.pi / math.sqrt(2.0 * rho))
    assert defect < 1e-9
    elapsed = time.time() - t0
    assert elapsed < 120.0
    announce(f"CRITERION 7 PASS: fitted exponents "
             f"{res['twist_exponent']:.3f} / {res['action_exponent']:.3f} "
             f"within 0.25 of -1.5 / -0.5; integrable defect {defect:.1e} "
             f"< 1e-9; {elapsed:.1f}s < 120s")


def test_criterion_8_boundedness_dichotomy(ctx, announce):
    t0 = time.time()
    grow = pendulum_fixture(ctx, "growing")
    rep = boundedness_experiment(grow, [50.0], 200.0, tol=1e-9)[0]
    assert rep["growth_rate"] >= 0.45
    trap = pendulum_fixture(ctx, "trapped")
    rep2 = boundedness_experiment(trap, [50.0], 1000.0, tol=1e-9)[0]
    assert rep2["max_dev"] <= 2.0
    elapsed = time.time() - t0
    assert elapsed < 180.0
    announce(f"CRITERION 8 PASS: p* = 1 growth rate "
             f"{rep['growth_rate']:.3f} >= 0.45; mean-zero excursion "
             f"{rep2['max_dev']:.3f} <= 2 over t = 1000; "
             f"{elapsed:.0f}s < 180s")


def test_criterion_9_manifest_replay(tmp_path, announce):
    from apkam.cli import main
    from apkam.util import load_json, sha256_file
    fx = tmp_path / "fx"
    assert main(["fixtures", "write", "--out-dir", str(fx),
                 "--manifest", "fixtures.manifest.json"]) == 0
    run_a = tmp_path / "a"
    assert main(["kam", "run", "--map", str(fx / "map_single.json"),
                 "--ctx", str(fx / "ctx.json"), "--out", "curve.json",
                 "--log", "stages.csv", "--out-dir", str(run_a),
                 "--manifest", "run.manifest.json"]) == 0
    compared = 0
    for manifest, fresh in ((run_a / "run.manifest.json", tmp_path / "b"),
                            (fx / "fixtures.manifest.json", tmp_path / "c")):
        man = load_json(manifest)
        assert main(["replay", str(manifest), "--out-dir", str(fresh)]) == 0
        for path, digest in {**man["outputs"], **man["figures"]}.items():
            twin = fresh / os.path.basename(path)
            assert sha256_file(twin) == digest
            compared += 1
    announce(f"CRITERION 9 PASS: {compared} replayed output files "
             f"bit-identical across both manifests")
