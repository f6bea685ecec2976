import math
import warnings

import numpy as np
import pytest
from scipy.integrate import quad

from apkam.apseries import APSeries1
from apkam.errors import ChartBreakdown
from apkam.fixtures import pendulum_fixture
from apkam.multiindex import MultiIndex
from apkam.pendulum import (PendulumSystem, PoincareState,
                            boundedness_experiment, exactness_defect,
                            fit_twistmap, forcing_primitives, integrate_ivp,
                            mu_of_rho, poincare_asymptotics, poincare_map,
                            poincare_orbit, rho_of_mu, small_twist_chart,
                            twist_term, unscale)

SQRT2 = math.sqrt(2.0)


@pytest.fixture(scope="module")
def sys_free(ctx):
    zero = APSeries1.zero(ctx)
    return PendulumSystem(modes={1: zero, -1: zero}, p=zero, ctx=ctx)


@pytest.fixture(scope="module")
def sys_mod(ctx):
    return pendulum_fixture(ctx, "modulated")


def test_forcing_primitives_single_mode(ctx):
    p = APSeries1.cosine(ctx, MultiIndex.unit(1), 1.0)
    prims = forcing_primitives(p, ctx)
    assert prims.p_star == 0.0
    w1 = ctx.omega[0]
    ts = np.linspace(-7, 7, 20)
    assert np.max(np.abs(prims.P.evaluate(ts) - np.sin(w1 * ts) / w1)) < 1e-13


def test_forcing_primitives_constant(ctx):
    p = APSeries1.constant(ctx, 0.8)
    prims = forcing_primitives(p, ctx)
    assert prims.p_star == pytest.approx(0.8)
    assert prims.P.is_zero


def test_forcing_primitives_derivative_round_trip(ctx):
    rng = np.random.default_rng(0)
    from series_helpers import random_series1
    p = random_series1(ctx, rng, n_modes=8)
    prims = forcing_primitives(p, ctx)
    ts = rng.uniform(-20, 20, 20)
    lhs = prims.P.dx().evaluate(ts)
    rhs = p.evaluate(ts) - prims.p_star
    assert np.max(np.abs(lhs - rhs)) < 1e-12
    # coefficient identity is exact
    for l, c in prims.P.terms.items():
        assert c * 1j * ctx.inner(l) == pytest.approx(p.terms[l], rel=1e-15)


def test_integrate_free_particle(ctx, sys_free):
    traj = integrate_ivp(sys_free, 0.0, 1.0, (0.0, 10.0), tol=1e-11,
                         t_eval=np.linspace(0, 10, 11))
    assert np.max(np.abs(traj.x - traj.t)) < 1e-10
    assert np.max(np.abs(traj.y - 1.0)) < 1e-12


def test_integrate_energy_conservation(ctx):
    sys_a = pendulum_fixture(ctx, "autonomous")
    traj = integrate_ivp(sys_a, 0.0, 2.0, (0.0, 300.0), tol=1e-11,
                         t_eval=np.linspace(0, 300, 100))
    energy = traj.y ** 2 / 2 + np.array(
        [sys_a.g_value(t, x) for t, x in zip(traj.t, traj.x)])
    assert np.max(np.abs(energy - energy[0])) < 1e-10


def test_integrate_linear_closed_form(ctx, sys_free):
    # x'' = a cos(w t): x = x0 + y0 t + a (1 - cos(w t)) / w^2
    a = 0.7
    p = APSeries1.cosine(ctx, MultiIndex.unit(1), a)
    sys_lin = PendulumSystem(modes=dict(sys_free.modes), p=p, ctx=ctx)
    w = ctx.omega[0]
    traj = integrate_ivp(sys_lin, 0.2, 1.3, (0.0, 50.0), tol=1e-12,
                         t_eval=np.linspace(0, 50, 60))
    exact = 0.2 + 1.3 * traj.t + a * (1 - np.cos(w * traj.t)) / w ** 2
    assert np.max(np.abs(traj.x - exact)) < 1e-9


def test_poincare_integrable_closed_form(ctx, sys_free):
    rho = 1000.0
    nxt = poincare_map(sys_free, PoincareState(0.3, rho), tol=1e-13)
    assert abs(nxt.theta - 0.3 - twist_term(rho)) < 1e-9
    assert nxt.rho == pytest.approx(rho, abs=1e-12)


def test_poincare_twist_scaling(ctx, sys_mod):
    rho = 1e4
    t1 = poincare_map(sys_mod, PoincareState(0.3, rho)).theta - 0.3
    t2 = poincare_map(sys_mod, PoincareState(0.3, 2 * rho)).theta - 0.3
    assert t2 / t1 == pytest.approx(2.0 ** -0.5, abs=1e-3)


def test_poincare_no_drift_mean_zero(ctx):
    sys_t = pendulum_fixture(ctx, "trapped")
    orbit = poincare_orbit(sys_t, PoincareState(0.0, 1000.0), 1000, tol=1e-10)
    # increments average out: no secular drift of the action
    assert abs(orbit[-1, 1] - orbit[0, 1]) < 2.0
    assert np.max(np.abs(orbit[:, 1] - orbit[0, 1])) < 5.0


def test_poincare_asymptotic_exponents(ctx, sys_mod):
    res = poincare_asymptotics(sys_mod, np.geomspace(100, 10000, 9),
                               tol=1e-12)
    assert abs(res["twist_exponent"] - (-1.5)) < 0.25
    assert abs(res["action_exponent"] - (-0.5)) < 0.25
    assert np.all(res["twist_defect"] <= res["K_twist"]
                  * res["rhos"] ** -1.5 * (1 + 1e-9))


def test_chart_breakdown_low_energy(ctx):
    sys_a = pendulum_fixture(ctx, "autonomous")
    with pytest.raises(ChartBreakdown):
        poincare_map(sys_a, PoincareState(0.0, 1.5))


def test_small_twist_chart_relations(ctx):
    st = PoincareState(0.7, 5234.0)
    sc = small_twist_chart(st, 0.4, 0.6)
    assert sc.mu == pytest.approx(0.5)  # the defining anchor (a+b)/2
    assert sc.delta * sc.mu == pytest.approx(1.0 / math.sqrt(2 * st.rho))
    back = unscale(sc)
    assert back.rho == pytest.approx(st.rho, rel=1e-14)
    assert back.theta == st.theta
    # delta decreases monotonically as rho grows
    deltas = [small_twist_chart(PoincareState(0.0, r), 0.4, 0.6).delta
              for r in (1e2, 1e3, 1e4, 1e5)]
    assert deltas == sorted(deltas, reverse=True)
    # round trip through the (mu, delta) helpers
    assert mu_of_rho(rho_of_mu(0.47, 0.01), 0.01) == pytest.approx(0.47)


def test_exactness_surrogate_decreases(ctx, sys_mod):
    d_lo = exactness_defect(sys_mod, 1e3, n=32, window=150.0)
    d_hi = exactness_defect(sys_mod, 1e5, n=32, window=150.0)
    assert d_hi < d_lo


def test_boundedness_growing(ctx):
    sys_g = pendulum_fixture(ctx, "growing")
    rep = boundedness_experiment(sys_g, [30.0], 60.0, tol=1e-9)[0]
    assert rep["p_star"] == pytest.approx(1.0)
    assert rep["growth_rate"] >= 0.45


def test_boundedness_energy_trap(ctx):
    sys_a = pendulum_fixture(ctx, "autonomous")
    rep = boundedness_experiment(sys_a, [5.0], 200.0, tol=1e-10)[0]
    # energy conservation bounds |y| by sqrt(2 E0 + 2) = 5 exactly here
    assert rep["max_abs_y"] <= 5.0 + 1e-6


def test_system_json_round_trip(ctx, sys_mod, tmp_path):
    from apkam.util import dump_json, load_json
    path = tmp_path / "sys.json"
    dump_json(sys_mod.to_json(), path)
    back = PendulumSystem.from_json(load_json(path))
    for t, x in ((0.0, 0.0), (3.7, 1.1)):
        assert back.g_value(t, x) == pytest.approx(sys_mod.g_value(t, x))
        assert back.p.evaluate(t) == pytest.approx(sys_mod.p.evaluate(t))


def test_m1_m2_expansion_identities(ctx, sys_mod):
    """The explicit remainder formulas agree with the chain rule exactly.

    d rho/du = (1 + P / sqrt(2 rho))^-1 * M1 with
    M1 = p/2 * int_0^1 (1 + s x)^(-3/2) ds * x + (h - G)^(-1/2) G_t / sqrt2,
    x = (sqrt(2 rho) P - G) / rho; and d theta/du picks up
    M2 = -J(t) / (2 rho)^(3/2) * d rho/du.
    """
    prims = forcing_primitives(sys_mod.p, sys_mod.ctx)
    for rho in (200.0, 3e3, 1e5):
        for theta, u in ((0.3, 0.0), (5.1, 2.0)):
            from apkam.pendulum import _t_of_theta
            t = _t_of_theta(theta, rho, prims)
            P = float(prims.P.evaluate(t))
            h = rho + SQRT2 * math.sqrt(rho) * P
            G = sys_mod.g_value(t, u)
            Gt = sys_mod.g_t(t, u)
            pt = float(sys_mod.p.evaluate(t))
            hg = h - G
            dt_du = 1.0 / math.sqrt(2.0 * hg)
            dh_du = pt + dt_du * Gt
            jac = 1.0 + P / math.sqrt(2.0 * rho)
            # chain rule for rho(h, t)
            drho_chain = (dh_du - SQRT2 * math.sqrt(rho) * pt * dt_du) / jac
            # explicit M1 with the integral evaluated by quadrature
            x = (SQRT2 * math.sqrt(rho) * P - G) / rho
            integral = quad(lambda s: (1 + s * x) ** -1.5, 0.0, 1.0,
                            epsabs=1e-14, epsrel=1e-13)[0]
            m1 = 0.5 * pt * integral * x + dt_du * Gt
            drho_m1 = m1 / jac
            scale = max(abs(drho_chain), 1e-12)
            assert abs(drho_chain - drho_m1) < 1e-10 * scale
            # theta equation: the published main term + M2 against the
            # chain rule d theta/du = jac * dt/du + (d theta/d rho) drho/du
            J = prims.int_P(t)
            dtheta_formula = dt_du * jac - J / (2.0 * rho) ** 1.5 * drho_m1
            dtheta_chain = jac * dt_du \
                - 2.0 ** -1.5 * rho ** -1.5 * J * drho_chain
            tscale = max(abs(dtheta_chain), 1e-12)
            assert abs(dtheta_formula - dtheta_chain) < 1e-10 * tscale


def test_fitmap_feeds_kam(ctx, sys_mod):
    small, report = fit_twistmap(sys_mod, ctx, (0.4, 0.6), rho_ref=2e4,
                                 fit_weight=2, fit_degree=2, n_theta=90,
                                 n_mu=4)
    assert report["fit_residual_f"] < report["eps_fit"]
    assert report["fit_residual_g"] < report["eps_fit"]
    from apkam.kam import kam_iterate
    from apkam.twistmap import to_standard
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        std = to_standard(small)
        curve = kam_iterate(std, std.ctx, mode="practical", tol_conj=5e-9,
                            max_stage=5)
    assert curve.conjugacy_residual < 5e-9
