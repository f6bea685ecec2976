"""Truncated real-analytic almost periodic functions and their calculus.

Two representation classes:

* ``APSeries1`` -- f(x) = sum over l of f_l * exp(i (omega,l) x), a sparse
  table MultiIndex -> complex coefficient.
* ``APSeries2`` -- f(x, y) = sum over l of f_l(y) * exp(i (omega,l) x) where
  each f_l is a polynomial in (y - alpha) of degree <= degree_cap, stored as
  an ascending complex coefficient vector.

The weighted norm of a series measured on the window (r, s) is
sum over l of |f_l|_s * exp(r * weight(l)), where |f_l|_s is the disk bound
sum_j |c_j| s^j -- an upper bound for the sup over |y - alpha| <= s, so every
inequality asserted against it is conservative.  Windows are arguments to the
norm, not part of the series: one coefficient table serves every (shrinking)
domain.

Coefficients whose magnitude falls below DROP_TOL relative to the series mass
are discarded, and all discarded mass is accumulated into a TruncationBound
carried with the result, so downstream convergence claims stay honest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from .errors import (CompositionDomain, ContextMismatch, ContractionFailure,
                     UnverifiedIndex)
from .frequency import FrequencyContext
from .multiindex import ZERO, MultiIndex

DROP_TOL = 1e-16

# pair tables larger than this are processed in row chunks to bound memory
_PAIR_CHUNK = 2_000_000


@dataclass(frozen=True)
class AnalyticityWindow:
    """Domain |Im x| < r, |y - alpha| < s on which norms are measured."""
    r: float
    s: float

    def __post_init__(self):
        if self.r <= 0 or self.s <= 0:
            raise ValueError("window requires r > 0 and s > 0")

    def shrink(self, dr: float, ds: float) -> "AnalyticityWindow":
        return AnalyticityWindow(self.r - dr, self.s - ds)


@dataclass(frozen=True)
class TruncationBound:
    """Conservative bound on everything a computation discarded.

    ``at(r, s)`` dominates the weighted norm of the discarded terms on any
    window with the recorded weight/degree reach: each dropped coefficient c
    at Fourier weight w and polynomial degree j contributes
    |c| e^{r w} s^j <= |c| e^{r max_weight} max(1, s)^{max_degree}.
    """
    mass: float = 0.0
    max_weight: int = 0
    max_degree: int = 0

    def at(self, window: AnalyticityWindow) -> float:
        return (self.mass * math.exp(window.r * self.max_weight)
                * max(1.0, window.s) ** self.max_degree)

    def merged(self, other: "TruncationBound") -> "TruncationBound":
        if other.mass == 0.0:
            return self
        if self.mass == 0.0:
            return other
        return TruncationBound(self.mass + other.mass,
                               max(self.max_weight, other.max_weight),
                               max(self.max_degree, other.max_degree))

    def scaled(self, factor: float) -> "TruncationBound":
        return TruncationBound(self.mass * abs(factor), self.max_weight,
                               self.max_degree)


NO_TRUNCATION = TruncationBound()


def _trunc_through_product(t: TruncationBound, series) -> TruncationBound:
    """Bound on (discarded mass of one factor) * (the other factor)."""
    if t.mass == 0.0:
        return NO_TRUNCATION
    return TruncationBound(
        t.mass * (series.mass() + series.trunc.mass),
        t.max_weight + max(series.max_weight(), series.trunc.max_weight),
        t.max_degree + max(series.max_degree(), series.trunc.max_degree))


# -- polynomial helpers (ascending complex coefficients in (y - alpha)) -------

def _ptrim(c: np.ndarray) -> np.ndarray:
    n = c.shape[0]
    while n > 1 and c[n - 1] == 0:
        n -= 1
    return np.ascontiguousarray(c[:n])


def _pcoerce(value) -> np.ndarray:
    c = np.atleast_1d(np.asarray(value, dtype=complex))
    if c.ndim != 1:
        raise ValueError("polynomial coefficients must be 1-D")
    return _ptrim(c)


def _padd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[0] < b.shape[0]:
        a, b = b, a
    out = a.copy()
    out[: b.shape[0]] += b
    return out


def _pbound(c: np.ndarray, s: float) -> float:
    """Disk bound sum_j |c_j| s^j (upper bound for the sup over the disk)."""
    return float(np.polyval(np.abs(c)[::-1], s))


def _peval(c: np.ndarray, dy):
    """Evaluate at y with dy = y - alpha (scalar or array)."""
    return np.polyval(c[::-1], dy)


def _pderiv(c: np.ndarray) -> np.ndarray:
    if c.shape[0] <= 1:
        return np.zeros(1, dtype=complex)
    return c[1:] * np.arange(1, c.shape[0], dtype=float)


def _require_same_ctx(a, b):
    if a.ctx.fingerprint() != b.ctx.fingerprint():
        raise ContextMismatch("series built over different frequency contexts")


# -- shared sparse-term machinery ---------------------------------------------

def _box_caps(ctx) -> np.ndarray:
    w, o = ctx.lattice.max_weight, ctx.lattice.max_order
    return np.array([min(w // i, o) for i in range(1, ctx.max_dim + 1)],
                    dtype=np.int64)


def _encode(coords: np.ndarray, caps: np.ndarray) -> np.ndarray:
    """Pack in-lattice dense coordinates into one integer key per row."""
    key = np.zeros(coords.shape[0], dtype=np.int64)
    stride = 1
    for i in range(caps.shape[0]):
        key += (coords[:, i] + caps[i]) * stride
        stride *= int(2 * caps[i] + 1)
    return key


def _decode_one(key: int, caps: np.ndarray) -> MultiIndex:
    entries = []
    for i in range(caps.shape[0]):
        span = int(2 * caps[i] + 1)
        v = key % span - caps[i]
        key //= span
        if v:
            entries.append((i + 1, int(v)))
    return MultiIndex(entries)


class _SeriesBase:
    """Common table plumbing for the 1- and 2-variable series."""

    def _sorted_items(self):
        return [(l, self.terms[l]) for l in sorted(self.terms)]

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def max_weight(self) -> int:
        return max((l.weight for l in self.terms), default=0)


# ==============================================================================
# APSeries1
# ==============================================================================

class APSeries1(_SeriesBase):
    """Pure Fourier series sum f_l exp(i (omega,l) x) over the lattice."""

    def __init__(self, ctx: FrequencyContext, terms=None, real=False,
                 trunc=NO_TRUNCATION, _checked=False, _drop=True):
        self.ctx = ctx
        self.real = bool(real)
        self.trunc = trunc
        table: Dict[MultiIndex, complex] = {}
        for l, c in (terms or {}).items():
            c = complex(c)
            if c != 0:
                table[l] = table.get(l, 0.0) + c
        if not _checked:
            for l in table:
                if not ctx.contains(l):
                    raise UnverifiedIndex(f"index {l} outside verified lattice")
        self.terms = table
        if _drop:
            self._drop_small()
        if self.real:
            self._symmetrize()

    def _drop_small(self):
        if not self.terms:
            return
        scale = sum(abs(c) for c in self.terms.values())
        dropped = 0.0
        wmax = 0
        for l in sorted(self.terms):
            if abs(self.terms[l]) < DROP_TOL * scale:
                dropped += abs(self.terms[l])
                wmax = max(wmax, l.weight)
                del self.terms[l]
        if dropped:
            self.trunc = self.trunc.merged(TruncationBound(dropped, wmax, 0))

    def _symmetrize(self):
        for l in sorted(self.terms):
            if l not in self.terms:
                continue
            m = -l
            if l == m:
                self.terms[l] = complex(self.terms[l].real, 0.0)
                continue
            cl = self.terms.get(l, 0.0)
            cm = self.terms.get(m, 0.0)
            avg = 0.5 * (cl + np.conj(cm))
            self.terms[l] = complex(avg)
            self.terms[m] = complex(np.conj(avg))

    # -- constructors ----------------------------------------------------------

    @classmethod
    def zero(cls, ctx) -> "APSeries1":
        return cls(ctx, {}, real=True, _checked=True)

    @classmethod
    def constant(cls, ctx, value) -> "APSeries1":
        real = abs(complex(value).imag) == 0.0
        return cls(ctx, {ZERO: complex(value)}, real=real, _checked=True)

    @classmethod
    def cosine(cls, ctx, l: MultiIndex, amplitude: float) -> "APSeries1":
        """amplitude * cos((omega, l) x) as a conjugate mode pair."""
        return cls(ctx, {l: amplitude / 2.0, -l: amplitude / 2.0}, real=True)

    # -- observables -----------------------------------------------------------

    def norm(self, r: float) -> float:
        """Weighted norm sum |f_l| exp(r ||l||)."""
        return float(sum(abs(c) * math.exp(r * l.weight)
                         for l, c in self._sorted_items()))

    def mass(self) -> float:
        return float(sum(abs(c) for c in self.terms.values()))

    def mean(self) -> complex:
        return self.terms.get(ZERO, 0.0 + 0.0j)

    def evaluate(self, x):
        """Value at real x (scalar or array); real output when flagged real."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape, dtype=complex)
        for l, c in self._sorted_items():
            out += c * np.exp(1j * self.ctx.inner(l) * x)
        if self.real:
            _assert_real(out)
            return out.real if out.shape else float(out.real)
        return out if out.shape else complex(out)

    # -- algebra ---------------------------------------------------------------

    def __add__(self, other):
        if np.isscalar(other):
            other = APSeries1.constant(self.ctx, other)
        _require_same_ctx(self, other)
        table = dict(self.terms)
        for l, c in other._sorted_items():
            table[l] = table.get(l, 0.0) + c
        return APSeries1(self.ctx, table, real=self.real and other.real,
                         trunc=self.trunc.merged(other.trunc), _checked=True)

    __radd__ = __add__

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        return self + (-other)

    def scale(self, factor) -> "APSeries1":
        factor = complex(factor)
        table = {l: factor * c for l, c in self.terms.items()}
        return APSeries1(self.ctx, table,
                         real=self.real and factor.imag == 0.0,
                         trunc=self.trunc.scaled(abs(factor)), _checked=True)

    def shift_x(self, a: float) -> "APSeries1":
        """f(x + a): multiply each mode by exp(i (omega,l) a)."""
        table = {l: c * np.exp(1j * self.ctx.inner(l) * a)
                 for l, c in self.terms.items()}
        return APSeries1(self.ctx, table, real=self.real, trunc=self.trunc,
                         _checked=True)

    def dx(self) -> "APSeries1":
        table = {l: 1j * self.ctx.inner(l) * c for l, c in self.terms.items()
                 if not l.is_zero}
        return APSeries1(self.ctx, table, real=self.real, trunc=self.trunc,
                         _checked=True)

    def antiderivative(self, divisor_floor: float = 1e-14) -> "APSeries1":
        """Mean-zero primitive: coefficients f_l / (i (omega,l)), l != 0.

        The constant of integration is fixed by the zero-mean requirement.
        Raises SmallDivisorBreakdown when a retained mode divides by an
        untrustworthy |(omega,l)|.
        """
        from .errors import SmallDivisorBreakdown
        scale = self.mass()
        table = {}
        for l, c in self._sorted_items():
            if l.is_zero:
                continue
            inner = self.ctx.inner(l)
            if abs(inner) < divisor_floor:
                if abs(c) < DROP_TOL * scale:
                    continue
                raise SmallDivisorBreakdown(
                    f"|(omega,l)| = {abs(inner):.3e} below floor for {l}")
            table[l] = c / (1j * inner)
        return APSeries1(self.ctx, table, real=self.real, _checked=True)

    def as_series2(self, degree_cap: int = 8) -> "APSeries2":
        table = {l: np.array([c]) for l, c in self.terms.items()}
        return APSeries2(self.ctx, table, real=self.real,
                         degree_cap=degree_cap, trunc=self.trunc,
                         _checked=True)

    # -- serialization -----------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "real": self.real,
            "terms": [{"index": l.to_json(), "coeff": [c.real, c.imag]}
                      for l, c in self._sorted_items()],
        }

    @classmethod
    def from_json(cls, ctx, data: dict) -> "APSeries1":
        table = {MultiIndex.from_json(t["index"]):
                 complex(t["coeff"][0], t["coeff"][1]) for t in data["terms"]}
        return cls(ctx, table, real=data["real"])


def _assert_real(values: np.ndarray):
    scale = max(1.0, float(np.max(np.abs(values))) if values.size else 1.0)
    resid = float(np.max(np.abs(values.imag))) if values.size else 0.0
    if resid > 1e-12 * scale:
        raise ArithmeticError(
            f"imaginary residue {resid:.3e} on a series flagged real")


# ==============================================================================
# APSeries2
# ==============================================================================

class APSeries2(_SeriesBase):
    """Fourier-in-x, Taylor-in-(y - alpha) series over a frequency context."""

    def __init__(self, ctx: FrequencyContext, terms=None, real=False,
                 degree_cap: int = 8, trunc=NO_TRUNCATION, _checked=False,
                 _drop=True):
        self.ctx = ctx
        self.real = bool(real)
        self.degree_cap = int(degree_cap)
        self.trunc = trunc
        table: Dict[MultiIndex, np.ndarray] = {}
        for l, poly in (terms or {}).items():
            c = _pcoerce(poly)
            if c.shape[0] > self.degree_cap + 1:
                cut = c[self.degree_cap + 1:]
                self.trunc = self.trunc.merged(TruncationBound(
                    float(np.sum(np.abs(cut))), l.weight, c.shape[0] - 1))
                c = _ptrim(c[: self.degree_cap + 1])
            if np.any(c != 0):
                table[l] = _padd(table[l], c) if l in table else c
        if not _checked:
            for l in table:
                if not ctx.contains(l):
                    raise UnverifiedIndex(f"index {l} outside verified lattice")
        self.terms = table
        if _drop:
            self._drop_small()
        if self.real:
            self._symmetrize()

    def _drop_small(self):
        if not self.terms:
            return
        keys = sorted(self.terms)
        vals = [self.terms[l] for l in keys]
        offsets = np.cumsum([0] + [v.shape[0] for v in vals])
        mags = np.abs(np.concatenate(vals))
        scale = float(mags.sum())
        small = mags < DROP_TOL * scale
        if not bool(small.any()):
            return
        dropped = 0.0
        wmax = dmax = 0
        for i, l in enumerate(keys):
            seg = small[offsets[i]: offsets[i + 1]]
            if not bool(seg.any()):
                continue
            c = self.terms[l]
            dropped += float(np.sum(np.abs(c[seg])))
            wmax = max(wmax, l.weight)
            dmax = max(dmax, int(np.max(np.nonzero(seg)[0])))
            c = c.copy()
            c[seg] = 0.0
            c = _ptrim(c)
            if np.any(c != 0):
                self.terms[l] = c
            else:
                del self.terms[l]
        if dropped:
            self.trunc = self.trunc.merged(TruncationBound(dropped, wmax, dmax))

    def _symmetrize(self):
        for l in sorted(self.terms):
            if l not in self.terms:
                continue
            m = -l
            if l == m:
                self.terms[l] = _ptrim(self.terms[l].real.astype(complex))
                if not np.any(self.terms[l] != 0):
                    del self.terms[l]
                continue
            cl = self.terms.get(l, np.zeros(1, dtype=complex))
            cm = self.terms.get(m, np.zeros(1, dtype=complex))
            avg = 0.5 * _padd(cl, np.conj(cm))
            self.terms[l] = avg
            self.terms[m] = np.conj(avg)

    # -- constructors ----------------------------------------------------------

    @classmethod
    def zero(cls, ctx, degree_cap: int = 8) -> "APSeries2":
        return cls(ctx, {}, real=True, degree_cap=degree_cap, _checked=True)

    @classmethod
    def constant(cls, ctx, value, degree_cap: int = 8) -> "APSeries2":
        real = abs(complex(value).imag) == 0.0
        return cls(ctx, {ZERO: [value]}, real=real, degree_cap=degree_cap,
                   _checked=True)

    @classmethod
    def y_minus_alpha(cls, ctx, degree_cap: int = 8) -> "APSeries2":
        return cls(ctx, {ZERO: [0.0, 1.0]}, real=True, degree_cap=degree_cap,
                   _checked=True)

    @classmethod
    def cosine(cls, ctx, l: MultiIndex, amplitude, poly=(1.0,),
               degree_cap: int = 8) -> "APSeries2":
        """amplitude * cos((omega,l) x) * poly(y - alpha)."""
        c = _pcoerce(poly) * (amplitude / 2.0)
        return cls(ctx, {l: c, -l: np.conj(c)}, real=True,
                   degree_cap=degree_cap)

    # -- observables -----------------------------------------------------------

    def norm(self, window: AnalyticityWindow) -> float:
        """sum over l of (disk bound of f_l at s) * exp(r ||l||)."""
        return float(sum(_pbound(c, window.s) * math.exp(window.r * l.weight)
                         for l, c in self._sorted_items()))

    def mass(self) -> float:
        return float(sum(np.sum(np.abs(c)) for c in self.terms.values()))

    def max_degree(self) -> int:
        return max((c.shape[0] - 1 for c in self.terms.values()), default=0)

    def mean(self) -> np.ndarray:
        """The l = 0 coefficient polynomial (exact x-average)."""
        return self.terms.get(ZERO, np.zeros(1, dtype=complex)).copy()

    def subtract_mean(self) -> "APSeries2":
        table = {l: c for l, c in self.terms.items() if not l.is_zero}
        return APSeries2(self.ctx, table, real=self.real,
                         degree_cap=self.degree_cap, trunc=self.trunc,
                         _checked=True)

    def evaluate(self, x, y):
        """Value at real (x, y); arrays broadcast; real output when flagged."""
        x = np.asarray(x, dtype=float)
        dy = np.asarray(y, dtype=float) - self._alpha()
        out = np.zeros(np.broadcast(x, dy).shape, dtype=complex)
        for l, c in self._sorted_items():
            out += _peval(c, dy) * np.exp(1j * self.ctx.inner(l) * x)
        if self.real:
            _assert_real(np.atleast_1d(out))
            return out.real if out.shape else float(out.real)
        return out if out.shape else complex(out)

    def _alpha(self) -> float:
        if self.ctx.alpha is None:
            raise ValueError("context has no rotation number alpha")
        return self.ctx.alpha

    def at_y(self, y: float) -> APSeries1:
        """Slice y = const: evaluate every coefficient polynomial."""
        dy = float(y) - self._alpha()
        table = {l: complex(_peval(c, dy)) for l, c in self.terms.items()}
        return APSeries1(self.ctx, table, real=self.real, trunc=self.trunc,
                         _checked=True)

    # -- linear algebra ----------------------------------------------------------

    def __add__(self, other):
        if np.isscalar(other):
            other = APSeries2.constant(self.ctx, other, self.degree_cap)
        _require_same_ctx(self, other)
        table = {l: c.copy() for l, c in self.terms.items()}
        for l, c in other._sorted_items():
            table[l] = _padd(table[l], c) if l in table else c
        return APSeries2(self.ctx, table, real=self.real and other.real,
                         degree_cap=min(self.degree_cap, other.degree_cap),
                         trunc=self.trunc.merged(other.trunc), _checked=True)

    __radd__ = __add__

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        return self + (-other)

    def scale(self, factor) -> "APSeries2":
        factor = complex(factor)
        table = {l: factor * c for l, c in self.terms.items()}
        return APSeries2(self.ctx, table,
                         real=self.real and factor.imag == 0.0,
                         degree_cap=self.degree_cap,
                         trunc=self.trunc.scaled(abs(factor)), _checked=True)

    def __mul__(self, other):
        if np.isscalar(other):
            return self.scale(other)
        return self.mul(other)

    def __rmul__(self, other):
        if np.isscalar(other):
            return self.scale(other)
        return NotImplemented

    def shift_x(self, a: float) -> "APSeries2":
        table = {l: c * np.exp(1j * self.ctx.inner(l) * a)
                 for l, c in self.terms.items()}
        return APSeries2(self.ctx, table, real=self.real,
                         degree_cap=self.degree_cap, trunc=self.trunc,
                         _checked=True)

    def dx(self) -> "APSeries2":
        table = {l: 1j * self.ctx.inner(l) * c for l, c in self.terms.items()
                 if not l.is_zero}
        return APSeries2(self.ctx, table, real=self.real,
                         degree_cap=self.degree_cap, trunc=self.trunc,
                         _checked=True)

    def dy(self) -> "APSeries2":
        table = {l: _pderiv(c) for l, c in self.terms.items()}
        return APSeries2(self.ctx, table, real=self.real,
                         degree_cap=self.degree_cap, trunc=self.trunc,
                         _checked=True)

    # -- multiplication -----------------------------------------------------------

    def _dense_parts(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(coords (n,d), polys (n,D), weights (n,)) over sorted terms."""
        items = self._sorted_items()
        d = self.ctx.max_dim
        n = len(items)
        if n == 0:
            return (np.zeros((0, d), np.int64), np.zeros((0, 1), complex),
                    np.zeros(0))
        dmax = max(c.shape[0] for _, c in items)
        coords = np.zeros((n, d), dtype=np.int64)
        polys = np.zeros((n, dmax), dtype=complex)
        weights = np.zeros(n)
        for k, (l, c) in enumerate(items):
            coords[k] = l.dense(d)
            polys[k, : c.shape[0]] = c
            weights[k] = l.weight
        return coords, polys, weights

    def mul(self, other: "APSeries2") -> "APSeries2":
        """Fourier convolution with polynomial product in (y - alpha).

        Output indices leaving the verified lattice, and polynomial degrees
        above the cap, are dropped with their mass added to the result's
        truncation bound.  Accumulation order is fixed (sorted indices,
        row-major pairs), so results are bit-stable.
        """
        _require_same_ctx(self, other)
        cap = min(self.degree_cap, other.degree_cap)
        if self.is_zero or other.is_zero:
            inherited = _trunc_through_product(self.trunc, other).merged(
                _trunc_through_product(other.trunc, self))
            return APSeries2(self.ctx, {}, real=self.real and other.real,
                             degree_cap=cap, trunc=inherited, _checked=True)
        ctx = self.ctx
        caps = _box_caps(ctx)
        pos_w = np.arange(1, ctx.max_dim + 1, dtype=np.int64)
        c1, p1, _ = self._dense_parts()
        c2, p2, _ = other._dense_parts()
        n1, n2 = c1.shape[0], c2.shape[0]
        d1, d2 = p1.shape[1], p2.shape[1]
        dout = min(d1 + d2 - 1, cap + 1)

        key_parts = []
        val_parts = []
        drop_mass = 0.0
        drop_w = 0
        drop_deg = 0
        mass1 = np.sum(np.abs(p1), axis=1)
        mass2 = np.sum(np.abs(p2), axis=1)
        nz1 = [bool(np.any(p1[:, a])) for a in range(d1)]
        nz2 = [bool(np.any(p2[:, b])) for b in range(d2)]

        rows_per_chunk = max(1, _PAIR_CHUNK // max(1, n2))
        for start in range(0, n1, rows_per_chunk):
            stop = min(n1, start + rows_per_chunk)
            cc = c1[start:stop, None, :] + c2[None, :, :]
            ww = np.abs(cc) @ pos_w
            ok = ((ww <= ctx.lattice.max_weight)
                  & (np.abs(cc).max(axis=2) <= ctx.lattice.max_order))
            pi, qi = np.nonzero(ok)
            if not np.all(ok):
                po, qo = np.nonzero(~ok)
                drop_mass += float(np.sum(mass1[start + po] * mass2[qo]))
                drop_w = max(drop_w, int(ww[po, qo].max()))
                drop_deg = max(drop_deg, d1 + d2 - 2)
            if pi.size == 0:
                continue
            keys = _encode(cc[pi, qi], caps)
            vals = np.zeros((pi.size, dout), dtype=complex)
            for a in range(d1):
                if not nz1[a]:
                    continue
                ca = p1[start + pi, a]
                for b in range(d2):
                    if not nz2[b]:
                        continue
                    prod = ca * p2[qi, b]
                    if a + b <= cap:
                        vals[:, a + b] += prod
                    else:
                        drop_mass += float(np.sum(np.abs(prod)))
                        drop_w = max(drop_w, ctx.lattice.max_weight)
                        drop_deg = max(drop_deg, a + b)
            key_parts.append(keys)
            val_parts.append(vals)

        table: Dict[MultiIndex, np.ndarray] = {}
        if key_parts:
            keys = np.concatenate(key_parts)
            vals = np.concatenate(val_parts, axis=0)
            uniq, inv = np.unique(keys, return_inverse=True)
            acc = np.zeros((uniq.shape[0], dout), dtype=complex)
            for col in range(dout):
                acc[:, col] = (np.bincount(inv, weights=vals[:, col].real,
                                           minlength=uniq.shape[0])
                               + 1j * np.bincount(inv, weights=vals[:, col].imag,
                                                  minlength=uniq.shape[0]))
            for k, key in enumerate(uniq):
                c = _ptrim(acc[k])
                if np.any(c != 0):
                    table[_decode_one(int(key), caps)] = c

        trunc = _trunc_through_product(self.trunc, other).merged(
            _trunc_through_product(other.trunc, self))
        if drop_mass:
            trunc = trunc.merged(TruncationBound(drop_mass, drop_w, drop_deg))
        return APSeries2(self.ctx, table, real=self.real and other.real,
                         degree_cap=cap, trunc=trunc, _checked=True)

    # -- serialization -----------------------------------------------------------

    def to_json(self) -> dict:
        terms = []
        for l, c in self._sorted_items():
            flat = []
            for z in c:
                flat.extend([z.real, z.imag])
            terms.append({"index": l.to_json(), "poly": flat})
        return {"real": self.real, "degree_cap": self.degree_cap,
                "alpha": self.ctx.alpha, "terms": terms}

    @classmethod
    def from_json(cls, ctx, data: dict) -> "APSeries2":
        table = {}
        for t in data["terms"]:
            flat = t["poly"]
            c = np.array([complex(flat[2 * k], flat[2 * k + 1])
                          for k in range(len(flat) // 2)])
            table[MultiIndex.from_json(t["index"])] = c
        return cls(ctx, table, real=data["real"],
                   degree_cap=data.get("degree_cap", 8))


# ==============================================================================
# composition and near-identity inversion
# ==============================================================================

def _fourier_slices(f: APSeries2):
    """Degree-j slices G_j with f(x, y) = sum_j G_j(x) (y - alpha)^j."""
    jmax = f.max_degree()
    slices = []
    for j in range(jmax + 1):
        table = {l: np.array([c[j]]) for l, c in f.terms.items()
                 if c.shape[0] > j and c[j] != 0}
        slices.append(APSeries2(f.ctx, table, real=False,
                                degree_cap=f.degree_cap, _checked=True))
    return slices


def compose(f: APSeries2, u: APSeries2, v: APSeries2,
            window: AnalyticityWindow, target: AnalyticityWindow,
            strict: bool = True) -> APSeries2:
    """Truncated expansion of f(x + u(x,y), y + v(x,y)).

    The x-shift enters through exp(i (omega,l) u) expanded as a power series
    in u until the term bound (max|(omega,l)| * sup|u|)^k / k! drops below the
    truncation tolerance; the y-shift enters through Taylor re-centering of
    the coefficient polynomials.  Everything reduces to series products, so
    the discarded mass is tracked.  CompositionDomain is raised when
    ||u|| + ||v|| reaches min(r - r', s - s') (the smallness hypothesis) and strict
    is set.
    """
    _require_same_ctx(f, u)
    _require_same_ctx(f, v)
    eps = u.norm(window) + v.norm(window)
    margin = min(window.r - target.r, window.s - target.s)
    if strict and eps >= margin:
        raise CompositionDomain(
            f"||u|| + ||v|| = {eps:.3e} is not below the window margin "
            f"{margin:.3e}")
    if f.is_zero:
        return APSeries2.zero(f.ctx, f.degree_cap)

    omega_max = max((abs(f.ctx.inner(l)) for l in f.terms), default=0.0)
    sup_u = u.norm(target)
    rate = omega_max * sup_u
    k_max = 0
    term = 1.0
    while term > 1e-17 and k_max < 120:
        k_max += 1
        term *= rate / k_max
    if term > 1e-17:
        raise CompositionDomain(
            f"shift series does not converge (max |(omega,l)| * sup|u| = "
            f"{rate:.3e})")

    w = APSeries2.y_minus_alpha(f.ctx, f.degree_cap) + v
    slices = _fourier_slices(f)

    # T_k = sum_j d_x^k(G_j) w^j, assembled by Horner over j
    t_series = []
    for k in range(k_max + 1):
        if k > 0:
            slices = [g.dx() for g in slices]
        acc = slices[-1]
        for j in range(len(slices) - 2, -1, -1):
            acc = acc.mul(w) + slices[j]
        t_series.append(acc)

    # Horner over k: sum_k u^k / k! T_k
    result = t_series[k_max]
    for k in range(k_max - 1, -1, -1):
        result = t_series[k] + result.mul(u).scale(1.0 / (k + 1))

    remainder = (f.mass() * term * math.exp(rate))
    if remainder:
        result.trunc = result.trunc.merged(TruncationBound(
            remainder, f.ctx.lattice.max_weight,
            f.max_degree() + v.max_degree() * f.degree_cap))
    if f.real and u.real and v.real:
        result = APSeries2(f.ctx, result.terms, real=True,
                           degree_cap=result.degree_cap, trunc=result.trunc,
                           _checked=True)
    return result


def invert_near_identity(u: APSeries2, v: APSeries2,
                         window: AnalyticityWindow,
                         shrink: Tuple[float, float],
                         tol: float = 1e-13,
                         max_iter: int = 60) -> Tuple[APSeries2, APSeries2]:
    """Inverse of the near-identity map (x, y) -> (x + u, y + v).

    Solves 0 = u' + u(x + u', y + v') (and the v analogue) by fixed-point
    iteration; the returned (u', v') satisfy ||u'|| + ||v'|| <= ||u|| + ||v||
    on the shrunken window.  Requires the contraction condition
    max(1/dr, 1/ds) * eps * exp(2 eps + (s' + 2 eps)/s) < 1/2.
    """
    _require_same_ctx(u, v)
    dr, ds = shrink
    if dr <= 0 or ds <= 0 or dr >= window.r or ds >= window.s:
        raise ValueError("shrink amounts must lie strictly inside the window")
    target = window.shrink(dr, ds)
    eps = u.norm(window) + v.norm(window)
    lhs = (max(1.0 / dr, 1.0 / ds) * eps
           * math.exp(2.0 * eps + (target.s + 2.0 * eps) / window.s))
    if lhs >= 0.5:
        raise ContractionFailure(
            f"inversion contraction condition fails: {lhs:.3e} >= 1/2")
    ui, vi = -u, -v
    for _ in range(max_iter):
        un = -compose(u, ui, vi, window, target, strict=False)
        vn = -compose(v, ui, vi, window, target, strict=False)
        diff = (un - ui).norm(target) + (vn - vi).norm(target)
        ui, vi = un, vn
        if diff < tol:
            return ui, vi
    raise ContractionFailure(
        f"inversion fixed point did not stagnate below {tol} "
        f"in {max_iter} iterations")
