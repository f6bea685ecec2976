"""The forced pendulum x'' + G_x(t, x) = p(t) at large energy.

G is 2 pi periodic in x (finite Fourier table) with almost periodic
coefficients in t; p is almost periodic.  The module builds the coordinate
chain: primitives of the forcing, the time/angle role exchange valid at
large energy, the generating-function chart (theta, rho), and the Poincare
return map over one period of the angle.  The return map is computed by
integrating the exact (t, h) equations and mapping endpoints through the
chart -- the asymptotic expansion

    theta1 = theta + 2 pi * 2^(-1/2) rho^(-1/2) + O(rho^(-3/2))
    rho1   = rho + O(rho^(-1/2))

is treated as a property to verify, never as the implementation.  (The twist
term carries the 2 pi from integrating d theta/du over a full period
u in [0, 2 pi]; the integrable case G = 0, p = 0 gives it exactly.)

Boundedness dichotomy: with mean forcing p* > 0 the action grows at rate at
least p*/2 for large initial energy; with p* = 0 orbits stay trapped near
invariant curves of the small-twist return map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from .apseries import APSeries1, APSeries2, AnalyticityWindow
from .errors import ChartBreakdown, StepSizeUnderflow
from .frequency import FrequencyContext
from .multiindex import MultiIndex
from .twistmap import SmallTwistMap, TwistMap
from .util import golden_samples

SQRT2 = math.sqrt(2.0)


@dataclass
class PendulumSystem:
    """x'' + G_x(t, x) = p(t) with G(t, x) = sum_m c_m(t) exp(i m x)."""
    modes: Dict[int, APSeries1]
    p: APSeries1
    ctx: FrequencyContext

    def __post_init__(self):
        for m, c in self.modes.items():
            other = self.modes.get(-m)
            if other is None:
                raise ValueError(f"mode {m} lacks its conjugate partner")

    def g_value(self, t, x):
        out = 0.0 + 0.0j
        for m, c in sorted(self.modes.items()):
            out += complex(c.evaluate(t)) * np.exp(1j * m * x)
        return float(out.real)

    def g_x(self, t, x):
        out = 0.0 + 0.0j
        for m, c in sorted(self.modes.items()):
            if m:
                out += 1j * m * complex(c.evaluate(t)) * np.exp(1j * m * x)
        return float(out.real)

    def g_t(self, t, x):
        out = 0.0 + 0.0j
        for m, c in sorted(self.modes.items()):
            out += complex(c.dx().evaluate(t)) * np.exp(1j * m * x)
        return float(out.real)

    def g_sup(self) -> float:
        """Crude global bound sup |G| <= sum_m ||c_m||_0."""
        return sum(c.norm(0.0) for c in self.modes.values())

    def to_json(self) -> dict:
        return {"G": {"fourier_x": [{"m": m, "coeff": c.to_json()}
                                    for m, c in sorted(self.modes.items())]},
                "p": self.p.to_json(),
                "ctx": self.ctx.to_json()}

    @classmethod
    def from_json(cls, data: dict) -> "PendulumSystem":
        ctx = FrequencyContext.from_json(data["ctx"])
        modes = {int(e["m"]): APSeries1.from_json(ctx, e["coeff"])
                 for e in data["G"]["fourier_x"]}
        return cls(modes=modes, p=APSeries1.from_json(ctx, data["p"]), ctx=ctx)


@dataclass
class ForcingPrimitives:
    """p*, the zero-mean primitive P = int p + C, and the primitive of P."""
    p_star: float
    P: APSeries1
    C: float
    intP: APSeries1

    def int_P(self, t):
        """int_0^t P(s) ds (exact at series level since mean(P) = 0)."""
        return self.intP.evaluate(t) - self.intP.evaluate(0.0)


def forcing_primitives(p: APSeries1, ctx: FrequencyContext,
                       divisor_floor: float = 1e-14) -> ForcingPrimitives:
    """Primitives of the forcing; a nonzero mean p* is reported, not an error."""
    p_star = float(np.real(p.mean()))
    osc = p - p_star
    P = osc.antiderivative(divisor_floor)
    C = float(P.evaluate(0.0))
    intP = P.antiderivative(divisor_floor)
    return ForcingPrimitives(p_star=p_star, P=P, C=C, intP=intP)


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray


def integrate_ivp(sys: PendulumSystem, x0: float, y0: float,
                  t_span: Tuple[float, float], tol: float = 1e-10,
                  t_eval=None, method: str = "DOP853") -> Trajectory:
    """Integrate x' = y, y' = p(t) - G_x(t, x) adaptively."""

    def rhs(t, state):
        x, y = state
        return (y, sys.p.evaluate(t) - sys.g_x(t, x))

    sol = solve_ivp(rhs, t_span, (x0, y0), method=method, rtol=tol,
                    atol=tol * 1e-2, t_eval=t_eval, dense_output=True)
    if not sol.success:
        raise StepSizeUnderflow(f"integrator failed: {sol.message}")
    return Trajectory(t=sol.t, x=sol.y[0], y=sol.y[1])


# -- the large-energy chart ----------------------------------------------------


@dataclass
class PoincareState:
    theta: float
    rho: float

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")


@dataclass
class ScaledState:
    """Small-twist coordinates: delta * mu = 2^(-1/2) rho^(-1/2)."""
    theta: float
    mu: float
    delta: float


def _t_of_theta(theta: float, rho: float, prims: ForcingPrimitives,
                tol: float = 1e-14) -> float:
    """Invert theta = t + 2^(-1/2) rho^(-1/2) int_0^t P."""
    factor = 1.0 / math.sqrt(2.0 * rho)
    t = theta
    for _ in range(200):
        t_new = theta - factor * prims.int_P(t)
        if abs(t_new - t) < tol * max(1.0, abs(theta)):
            return t_new
        t = t_new
    raise ChartBreakdown("time-of-theta fixed point did not converge "
                         f"(rho = {rho:.3e} too small for this forcing)")


def _rho_of_h(h: float, t: float, prims: ForcingPrimitives) -> float:
    """Positive root of rho + sqrt(2 rho) P(t) = h."""
    pt = float(prims.P.evaluate(t))
    disc = 2.0 * pt * pt + 4.0 * h
    if disc <= 0:
        raise ChartBreakdown(f"chart inversion lost the energy branch (h={h})")
    root = 0.5 * (math.sqrt(disc) - SQRT2 * pt)
    if root <= 0:
        raise ChartBreakdown(f"chart inversion gave nonpositive action (h={h})")
    return root * root


def poincare_map(sys: PendulumSystem, state: PoincareState,
                 prims: Optional[ForcingPrimitives] = None,
                 tol: float = 1e-12, guard: float = 0.5) -> PoincareState:
    """One return of the angle-as-time system over u in [0, 2 pi].

    Integrates dt/du = 2^(-1/2) (h - G)^(-1/2),
               dh/du = p(t) + 2^(-1/2) (h - G)^(-1/2) G_t(t, u)
    from the chart preimage of (theta, rho) and maps the endpoint back.
    ChartBreakdown when h - G dips below guard * h0 or the chart derivative
    1 + 2^(-1/2) rho^(-1/2) P(t) leaves (1/2, inf).
    """
    if prims is None:
        prims = forcing_primitives(sys.p, sys.ctx)
    theta, rho = state.theta, state.rho
    t0 = _t_of_theta(theta, rho, prims)
    jac = 1.0 + float(prims.P.evaluate(t0)) / math.sqrt(2.0 * rho)
    if jac <= 0.5:
        raise ChartBreakdown(
            f"chart derivative 1 + P/sqrt(2 rho) = {jac:.3f} <= 1/2")
    h0 = rho + SQRT2 * math.sqrt(rho) * float(prims.P.evaluate(t0))
    floor = guard * h0
    if h0 - sys.g_sup() <= floor:
        raise ChartBreakdown(
            f"energy {h0:.3e} too close to sup|G| = {sys.g_sup():.3e}")

    def rhs(u, th):
        t, h = th
        hg = h - sys.g_value(t, u)
        if hg <= floor:
            raise ChartBreakdown(
                f"h - G = {hg:.3e} fell below the validity floor at u = {u:.3f}")
        inv_root = 1.0 / math.sqrt(2.0 * hg)
        return (inv_root, sys.p.evaluate(t) + inv_root * sys.g_t(t, u))

    sol = solve_ivp(rhs, (0.0, 2.0 * math.pi), (t0, h0), method="DOP853",
                    rtol=tol, atol=(tol, tol * max(1.0, abs(h0))))
    if not sol.success:
        raise StepSizeUnderflow(f"poincare integration failed: {sol.message}")
    t1, h1 = float(sol.y[0, -1]), float(sol.y[1, -1])
    rho1 = _rho_of_h(h1, t1, prims)
    jac1 = 1.0 + float(prims.P.evaluate(t1)) / math.sqrt(2.0 * rho1)
    if jac1 <= 0.5:
        raise ChartBreakdown(
            f"chart derivative left validity at the endpoint ({jac1:.3f})")
    theta1 = t1 + prims.int_P(t1) / math.sqrt(2.0 * rho1)
    return PoincareState(theta=theta1, rho=rho1)


def poincare_orbit(sys: PendulumSystem, state: PoincareState, n: int,
                   prims: Optional[ForcingPrimitives] = None,
                   tol: float = 1e-12) -> np.ndarray:
    """(n+1, 2) array of (theta, rho) iterates."""
    if prims is None:
        prims = forcing_primitives(sys.p, sys.ctx)
    out = np.empty((n + 1, 2))
    out[0] = (state.theta, state.rho)
    cur = state
    for k in range(1, n + 1):
        cur = poincare_map(sys, cur, prims=prims, tol=tol)
        out[k] = (cur.theta, cur.rho)
    return out


def twist_term(rho: float) -> float:
    """The integrable advance of theta over one return: 2 pi (2 rho)^(-1/2)."""
    return 2.0 * math.pi / math.sqrt(2.0 * rho)


def poincare_asymptotics(sys: PendulumSystem, rhos, theta0: float = 0.3,
                         tol: float = 1e-12) -> dict:
    """Fit the rho-scaling of the twist defect and the action increment.

    Returns the defects, the fitted log-log exponents (expected -3/2 and
    -1/2), and the fitted constants K with defect <= K * rho^exponent.
    """
    rhos = np.asarray(sorted(rhos), dtype=float)
    prims = forcing_primitives(sys.p, sys.ctx)
    twist_defect = np.empty(rhos.shape)
    action_defect = np.empty(rhos.shape)
    for i, rho in enumerate(rhos):
        nxt = poincare_map(sys, PoincareState(theta0, rho), prims=prims,
                           tol=tol)
        twist_defect[i] = abs(nxt.theta - theta0 - twist_term(rho))
        action_defect[i] = abs(nxt.rho - rho)
    def _fit(defect, expo):
        good = defect > 0
        slope, _ = np.polyfit(np.log(rhos[good]), np.log(defect[good]), 1)
        return float(slope), float(np.max(defect * rhos ** (-expo)))
    twist_exp, k_twist = _fit(twist_defect, -1.5)
    action_exp, k_action = _fit(action_defect, -0.5)
    return {"rhos": rhos, "twist_defect": twist_defect,
            "action_defect": action_defect, "twist_exponent": twist_exp,
            "action_exponent": action_exp, "K_twist": k_twist,
            "K_action": k_action}


# -- small-twist scaling --------------------------------------------------------


def small_twist_chart(state: PoincareState, a: float, b: float) -> ScaledState:
    """Scale the action so mu = (a+b)/2 at this rho; delta carries the size."""
    if not (0.0 < a < b):
        raise ValueError("need 0 < a < b")
    mu = 0.5 * (a + b)
    delta = 1.0 / (math.sqrt(2.0 * state.rho) * mu)
    return ScaledState(theta=state.theta, mu=mu, delta=delta)


def rho_of_mu(mu: float, delta: float) -> float:
    return 1.0 / (2.0 * (delta * mu) ** 2)


def mu_of_rho(rho: float, delta: float) -> float:
    return 1.0 / (delta * math.sqrt(2.0 * rho))


def unscale(scaled: ScaledState) -> PoincareState:
    return PoincareState(theta=scaled.theta,
                         rho=rho_of_mu(scaled.mu, scaled.delta))


def exactness_defect(sys: PendulumSystem, rho: float, n: int = 64,
                     window: float = 200.0, tol: float = 1e-11) -> float:
    """Discrete surrogate of lim (1/2T) int rho1 d theta1 - rho d theta.

    Averages rho1 * (d theta1/d theta) - rho along the image of the line
    rho = const; exact symplecticity makes this tend to 0 as rho grows.
    """
    prims = forcing_primitives(sys.p, sys.ctx)
    thetas = np.sort(golden_samples(n, window))
    t1 = np.empty(n)
    r1 = np.empty(n)
    for i, th in enumerate(thetas):
        nxt = poincare_map(sys, PoincareState(float(th), rho), prims=prims,
                           tol=tol)
        t1[i], r1[i] = nxt.theta, nxt.rho
    dtheta1 = np.gradient(t1, thetas)
    vals = r1 * dtheta1 - rho
    return float(abs(np.mean(vals)))


def boundedness_experiment(sys: PendulumSystem, y0_grid, t_max: float,
                           x0: float = 0.0, tol: float = 1e-9,
                           n_eval: int = 400) -> List[dict]:
    """Integrate each initial velocity and summarize growth vs trapping.

    Reports, per y0: the max |y|, the max excursion |y - y0|, and the fitted
    linear growth rate of y over [0, t_max].  With p* > 0 the rate should
    clear p*/2 for large y0; with p* = 0 the excursion should stay O(1).
    """
    prims = forcing_primitives(sys.p, sys.ctx)
    t_eval = np.linspace(0.0, t_max, n_eval)
    out = []
    for y0 in y0_grid:
        traj = integrate_ivp(sys, x0, float(y0), (0.0, t_max), tol=tol,
                             t_eval=t_eval)
        slope = float(np.polyfit(traj.t, traj.y, 1)[0])
        out.append({"y0": float(y0),
                    "max_abs_y": float(np.max(np.abs(traj.y))),
                    "max_dev": float(np.max(np.abs(traj.y - y0))),
                    "growth_rate": slope,
                    "p_star": prims.p_star})
    return out


# -- closing the loop: fit the return map into the twist representation --------


def fit_twistmap(sys: PendulumSystem, ctx: FrequencyContext,
                 interval: Tuple[float, float], rho_ref: float,
                 fit_weight: int = 3, fit_degree: int = 2,
                 n_theta: int = 160, n_mu: int = 5,
                 theta_window: float = 120.0, tol: float = 1e-12):
    """Least-squares fit of the scaled return map as a SmallTwistMap.

    Samples the Poincare map on a (theta, mu) grid, subtracts the rigid
    small-twist part, and projects the remainders onto the lattice Fourier
    basis (weight <= fit_weight) with polynomial dependence on (mu - alpha).
    Returns (SmallTwistMap, report) where the report carries the max fit
    residual -- it must stay below the KAM budget for a subsequent run on
    the fitted map to mean anything.
    """
    if ctx.alpha is None or not (interval[0] < ctx.alpha < interval[1]):
        raise ValueError("context alpha must lie inside the action interval")
    a, b = interval
    delta = small_twist_chart(PoincareState(0.0, rho_ref), a, b).delta
    # one return advances theta by 2 pi * delta * mu exactly in the
    # integrable case, so the standard-form twist coefficient is 2 pi delta;
    # declaring it keeps the fitted perturbation at its true O(rho^-3/2) size
    delta_fit = 2.0 * math.pi * delta
    if delta_fit >= 1.0:
        raise ValueError(f"rho_ref = {rho_ref} too small: twist coefficient "
                         f"{delta_fit:.3f} must stay below 1")
    prims = forcing_primitives(sys.p, sys.ctx)

    thetas = np.sort(golden_samples(n_theta, theta_window))
    mus = np.linspace(a + 0.05 * (b - a), b - 0.05 * (b - a), n_mu)
    rows = []
    f_data = []
    g_data = []
    for mu in mus:
        rho = rho_of_mu(float(mu), delta)
        for th in thetas:
            nxt = poincare_map(sys, PoincareState(float(th), rho),
                               prims=prims, tol=tol)
            mu1 = mu_of_rho(nxt.rho, delta)
            rows.append((float(th), float(mu)))
            f_data.append(nxt.theta - th - delta_fit * float(mu))
            g_data.append(mu1 - float(mu))
    f_data = np.asarray(f_data)
    g_data = np.asarray(g_data)

    basis = [l for l in ctx.indices() if l.weight <= fit_weight]
    th_arr = np.array([r[0] for r in rows])
    dmu = np.array([r[1] for r in rows]) - ctx.alpha
    cols = []
    labels = []
    for l in basis:
        phase = np.exp(1j * ctx.inner(l) * th_arr)
        for d in range(fit_degree + 1):
            cols.append(phase * dmu ** d)
            labels.append((l, d))
    design = np.stack(cols, axis=1)
    coef_f, *_ = np.linalg.lstsq(design, f_data.astype(complex), rcond=None)
    coef_g, *_ = np.linalg.lstsq(design, g_data.astype(complex), rcond=None)

    def assemble(coefs) -> APSeries2:
        table = {}
        for (l, d), c in zip(labels, coefs):
            poly = table.setdefault(l, np.zeros(fit_degree + 1, dtype=complex))
            poly[d] += c
        return APSeries2(ctx, table, real=True, degree_cap=max(8, fit_degree))

    f_fit = assemble(coef_f)
    g_fit = assemble(coef_g)
    res_f = float(np.max(np.abs(design @ coef_f - f_data)))
    res_g = float(np.max(np.abs(design @ coef_g - g_data)))
    window = AnalyticityWindow(0.25, 0.4 * (b - a))
    base = TwistMap(f=f_fit, g=g_fit, ctx=ctx, annulus=(a, b), window=window)
    small = SmallTwistMap(base=base, delta=delta_fit)
    report = {"fit_residual_f": res_f, "fit_residual_g": res_g,
              "delta": delta_fit, "chart_delta": delta, "rho_ref": rho_ref,
              "eps_fit": base.eps(), "n_samples": len(rows),
              "basis_size": len(labels)}
    return small, report


def default_system(ctx: FrequencyContext, p_amp: float = 0.5,
                   p_mean: float = 0.0, modulation: float = 0.0,
                   p_mode: int = 1, mod_mode: int = 2) -> PendulumSystem:
    """G = -cos x * (1 + modulation * cos(omega_j t)), p = mean + amp*cos."""
    one = APSeries1.constant(ctx, 1.0)
    if modulation:
        mod = one + APSeries1.cosine(ctx, MultiIndex.unit(mod_mode),
                                     modulation)
    else:
        mod = one
    half = mod.scale(-0.5)
    modes = {1: half, -1: half}
    p = APSeries1.constant(ctx, p_mean)
    if p_amp:
        p = p + APSeries1.cosine(ctx, MultiIndex.unit(p_mode), p_amp)
    return PendulumSystem(modes=modes, p=p, ctx=ctx)
