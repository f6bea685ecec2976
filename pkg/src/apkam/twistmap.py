"""The planar twist map x1 = x + y + f(x,y), y1 = y + g(x,y).

Holds the map's perturbation series, point/curve evaluation, the numerical
intersection-property probe, and the rescaling that brings the small-twist
variant x1 = x + delta*y + f into standard form.

The intersection check is advisory: it probes a supplied curve family, it
does not certify the property for all almost periodic curves (the KAM driver
treats the property as an assumption).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .apseries import AnalyticityWindow, APSeries1, APSeries2
from .errors import ReparametrizationFailure
from .frequency import FrequencyContext, rotation_check
from .util import load_json

import warnings


@dataclass
class TwistMap:
    f: APSeries2
    g: APSeries2
    ctx: FrequencyContext
    annulus: Tuple[float, float] = (0.0, 1.0)
    window: AnalyticityWindow = field(
        default_factory=lambda: AnalyticityWindow(0.5, 0.05))

    def __post_init__(self):
        if not (self.f.real and self.g.real):
            raise ValueError("twist map perturbations must be real series")

    def eps(self, window: Optional[AnalyticityWindow] = None) -> float:
        w = window or self.window
        return self.f.norm(w) + self.g.norm(w)

    def apply(self, x, y):
        """One iterate; x, y may be scalars or broadcastable arrays."""
        fx = self.f.evaluate(x, y)
        gy = self.g.evaluate(x, y)
        return x + y + fx, y + gy

    def orbit(self, x0: float, y0: float, n: int) -> np.ndarray:
        """(n+1, 2) array of iterates starting at (x0, y0)."""
        out = np.empty((n + 1, 2))
        out[0] = (x0, y0)
        x, y = float(x0), float(y0)
        for k in range(1, n + 1):
            x, y = self.apply(x, y)
            out[k] = (x, y)
        return out

    def apply_to_curve(self, phi: APSeries1, xs) -> Tuple[np.ndarray, np.ndarray]:
        """Image of the graph y = phi(x) sampled at parameters xs."""
        xs = np.asarray(xs, dtype=float)
        ys = np.broadcast_to(np.asarray(phi.evaluate(xs), dtype=float), xs.shape)
        return self.apply(xs, ys)

    # -- intersection probe -----------------------------------------------------

    def _image_x(self, t, phi: APSeries1):
        ph = phi.evaluate(t)
        return t + ph + self.f.evaluate(t, ph)

    def _image_y(self, t, phi: APSeries1):
        ph = phi.evaluate(t)
        return ph + self.g.evaluate(t, ph)

    def _invert_image_x(self, x_target: float, phi: APSeries1,
                        span: float, tol: float = 1e-12) -> float:
        """Solve image_x(t) = x_target by Newton with bisection fallback."""
        t = float(x_target)
        for _ in range(50):
            val = self._image_x(t, phi) - x_target
            if abs(val) < tol:
                return t
            h = 1e-7 * max(1.0, abs(t))
            dv = (self._image_x(t + h, phi) - self._image_x(t - h, phi)) / (2 * h)
            if dv <= 0:
                break
            t = t - val / dv
        lo, hi = x_target - span, x_target + span
        flo = self._image_x(lo, phi) - x_target
        fhi = self._image_x(hi, phi) - x_target
        if flo > 0 or fhi < 0:
            raise ReparametrizationFailure(
                "image x-coordinate not monotone-invertible near "
                f"x = {x_target:.6g} (perturbation too large)")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            fm = self._image_x(mid, phi) - x_target
            if abs(fm) < tol:
                return mid
            if fm < 0:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def gap(self, x: float, phi: APSeries1, span: Optional[float] = None) -> float:
        """Signed vertical distance image-over-curve at abscissa x."""
        if span is None:
            span = 1.0 + 2.0 * (self.annulus[1] + 1.0)
        t = self._invert_image_x(x, phi, span)
        return float(self._image_y(t, phi)) - float(phi.evaluate(x))

    def intersection_check(self, phi: APSeries1, x_range: Tuple[float, float],
                           samples: int = 128, witness_tol: float = 1e-10):
        """Look for a zero of the vertical gap between the curve and its image.

        Returns (found, witness): witness is an x with |gap| ~ 0 (located by
        bisection on a sign change) or None.  Monotonicity of the image
        x-coordinate is verified on the sample grid first.
        """
        if samples < 2:
            raise ValueError("need at least 2 samples")
        a, b = float(x_range[0]), float(x_range[1])
        ts = np.linspace(a, b, samples)
        img_x = np.array([self._image_x(t, phi) for t in ts])
        if np.any(np.diff(img_x) <= 0):
            raise ReparametrizationFailure(
                "image x-coordinate not increasing along the sample grid")
        gaps = np.array([self.gap(x, phi) for x in ts])
        scale = max(1e-300, float(np.max(np.abs(gaps))))
        zero = np.abs(gaps) <= 1e-12 * max(1.0, scale)
        if np.all(zero):
            return True, float(ts[0])
        if np.any(zero):
            return True, float(ts[int(np.argmax(zero))])
        sign_change = np.nonzero(np.diff(np.sign(gaps)) != 0)[0]
        if sign_change.size == 0:
            return False, None
        lo, hi = float(ts[sign_change[0]]), float(ts[sign_change[0] + 1])
        glo = self.gap(lo, phi)
        while hi - lo > witness_tol:
            mid = 0.5 * (lo + hi)
            gm = self.gap(mid, phi)
            if gm == 0.0:
                return True, mid
            if (gm > 0) == (glo > 0):
                lo, glo = mid, gm
            else:
                hi = mid
        return True, 0.5 * (lo + hi)

    # -- serialization ------------------------------------------------------------

    def to_json(self) -> dict:
        return {"annulus": list(self.annulus),
                "window": {"r0": self.window.r, "s0": self.window.s},
                "f": self.f.to_json(), "g": self.g.to_json()}

    @classmethod
    def from_json(cls, data: dict, ctx: FrequencyContext) -> "TwistMap":
        win = AnalyticityWindow(data["window"]["r0"], data["window"]["s0"])
        m = cls(f=APSeries2.from_json(ctx, data["f"]),
                g=APSeries2.from_json(ctx, data["g"]),
                ctx=ctx, annulus=tuple(data["annulus"]), window=win)
        if "delta" in data and data["delta"] is not None:
            return SmallTwistMap(base=m, delta=float(data["delta"]))
        return m

    @classmethod
    def load(cls, path, ctx: FrequencyContext):
        return cls.from_json(load_json(path), ctx)


@dataclass
class SmallTwistMap:
    """x1 = x + delta*y + f(x,y,delta), y1 = y + g(x,y,delta).

    delta = 1 is admitted as the identity rescaling even though applications
    drive delta to 0.
    """
    base: TwistMap
    delta: float
    eps_declared: Optional[float] = None

    def __post_init__(self):
        if not (0.0 < self.delta <= 1.0):
            raise ValueError("delta must lie in (0, 1]")
        if self.eps_declared is not None:
            have = self.base.eps()
            budget = self.delta * self.eps_declared
            if have > budget:
                raise ValueError(
                    f"||f|| + ||g|| = {have:.3e} exceeds the declared "
                    f"delta * eps = {budget:.3e}")

    def apply(self, x, y):
        fx = self.base.f.evaluate(x, y)
        gy = self.base.g.evaluate(x, y)
        return x + self.delta * y + fx, y + gy

    def to_json(self) -> dict:
        out = self.base.to_json()
        out["delta"] = self.delta
        return out


def to_standard(small: SmallTwistMap) -> TwistMap:
    """Rescale the action (y -> delta*y) into the standard twist form.

    The rescaled map rotates with delta*alpha on the invariant curve; the
    doubled-exponent nonresonance of delta*alpha over the lattice is
    re-checked here and a warning is issued when it fails, since the
    homological solves downstream divide by its small divisors.
    """
    m, d = small.base, small.delta
    ctx = m.ctx
    if ctx.alpha is None:
        raise ValueError("context has no rotation number alpha")
    new_ctx = FrequencyContext(
        omega=ctx.omega.copy(), params=ctx.params, lattice=ctx.lattice,
        alpha=d * ctx.alpha,
        interval=(d * m.annulus[0], d * m.annulus[1]), seed=ctx.seed)
    bad = [l for l in new_ctx.nonzero_indices()
           if not rotation_check(new_ctx.alpha, new_ctx.omega, l,
                                 new_ctx.params, new_ctx.interval)]
    if bad:
        warnings.warn(
            f"delta*alpha = {new_ctx.alpha:.8g} fails the rotation "
            f"nonresonance on {len(bad)} lattice indices", stacklevel=2)

    def rescale(series: APSeries2, extra: float) -> APSeries2:
        # y = Y/delta: coefficient of (y-alpha)^j becomes c_j / delta^j
        table = {l: extra * c * (d ** -np.arange(c.shape[0]))
                 for l, c in series.terms.items()}
        return APSeries2(new_ctx, table, real=series.real,
                         degree_cap=series.degree_cap, _checked=True)

    return TwistMap(f=rescale(m.f, 1.0), g=rescale(m.g, d), ctx=new_ctx,
                    annulus=(d * m.annulus[0], d * m.annulus[1]),
                    window=AnalyticityWindow(m.window.r, d * m.window.s))
