"""Diophantine frequency vectors and admissible rotation numbers.

The frequency vector omega is accepted when |(omega, l)| clears the bound
gamma0 / prod(1 + i^(1+mu) |l_i|^(1+mu)) for every nonzero multi-index l on a
finite verification lattice; the rotation number alpha is accepted when
(omega, l) * alpha / (2 pi) keeps a doubled-exponent distance from every
integer.  Both are found by rejection sampling against the product Lebesgue
measure, whose resonant-set measure is O(gamma0) resp. O(gamma), so a handful
of attempts suffices for small constants.

The accepted lattice is recorded in the context: downstream small-divisor
solves refuse indices the check never covered.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Tuple

import numpy as np

from .errors import (ExhaustedAttempts, IntervalTooSmall, SupportOutOfRange,
                     ZeroIndex)
from .multiindex import MultiIndex, enumerate_up_to

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class DiophantineParams:
    """Constants of the two nonresonance conditions.

    gamma0, mu control the frequency condition; gamma controls the rotation
    condition, whose product exponent is doubled to 2 + 2*mu.
    """
    gamma0: float = 1e-4
    mu: float = 1.0
    gamma: float = 1e-4

    def __post_init__(self):
        if self.gamma0 <= 0 or self.mu <= 0 or self.gamma <= 0:
            raise ValueError("gamma0, mu, gamma must all be positive")


class Lattice(NamedTuple):
    """Finite verification lattice: weight cap and per-coordinate order cap."""
    max_weight: int = 12
    max_order: int = 12


def small_divisor_bound(l: MultiIndex, params: DiophantineParams) -> float:
    """gamma0 / prod over supp(l) of (1 + i^(1+mu) |l_i|^(1+mu))."""
    if l.is_zero:
        raise ZeroIndex("small_divisor_bound requires a nonzero multi-index")
    prod = 1.0
    e = 1.0 + params.mu
    for p, v in l.entries:
        prod *= 1.0 + (p ** e) * (abs(v) ** e)
    return params.gamma0 / prod


def rotation_bound(l: MultiIndex, params: DiophantineParams) -> float:
    """gamma * prod of 1 / (1 + i^(2+2mu) |l_i|^(2+2mu)) (doubled exponent)."""
    if l.is_zero:
        raise ZeroIndex("rotation_bound requires a nonzero multi-index")
    prod = 1.0
    e = 2.0 + 2.0 * params.mu
    for p, v in l.entries:
        prod *= 1.0 + (p ** e) * (abs(v) ** e)
    return params.gamma / prod


def diophantine_check(omega, l: MultiIndex, params: DiophantineParams) -> bool:
    """True iff |(omega, l)| strictly clears the small-divisor bound."""
    if l.is_zero:
        raise ZeroIndex("diophantine_check requires a nonzero multi-index")
    if l.max_position() > len(omega):
        raise SupportOutOfRange(
            f"index support reaches position {l.max_position()}, "
            f"frequency has dimension {len(omega)}")
    return abs(l.dot(omega)) > small_divisor_bound(l, params)


def rotation_check(alpha, omega, l: MultiIndex, params: DiophantineParams,
                   interval: Optional[Tuple[float, float]] = None) -> bool:
    """True iff (omega,l)*alpha/2pi keeps its distance from nearby integers.

    The integer range covers every n for which the resonant strip can touch
    [a, b] (|n| <= |(omega,l)| * max(|a|,|b|) / 2pi, widened by 1); when no
    interval is given the bound is taken at alpha itself, which contains the
    nearest integer and is therefore equivalent.
    """
    if l.is_zero:
        raise ZeroIndex("rotation_check requires a nonzero multi-index")
    inner = l.dot(omega)
    reach = max(abs(interval[0]), abs(interval[1])) if interval else abs(alpha)
    n_max = math.ceil(abs(inner) * reach / TWO_PI) + 1
    bound = rotation_bound(l, params)
    t = inner * alpha / TWO_PI
    for n in range(-n_max, n_max + 1):
        if abs(t - n) <= bound:
            return False
    return True


@dataclass
class FrequencyContext:
    """An accepted frequency vector with its verification lattice.

    alpha is None until a rotation number has been sampled (or supplied);
    every series object downstream holds a reference to one of these and all
    of its indices live inside the recorded lattice.
    """
    omega: np.ndarray
    params: DiophantineParams
    lattice: Lattice
    alpha: Optional[float] = None
    interval: Optional[Tuple[float, float]] = None
    seed: Optional[int] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float)
        if self.omega.ndim != 1 or self.omega.size < 1:
            raise ValueError("omega must be a nonempty 1-D vector")
        if np.any(np.abs(self.omega) > 1.0):
            raise ValueError("every |omega_i| must be <= 1")

    @property
    def max_dim(self) -> int:
        return int(self.omega.size)

    # -- lattice machinery ---------------------------------------------------

    def indices(self):
        """The verified lattice including the zero index (cached)."""
        if "indices" not in self._cache:
            self._cache["indices"] = enumerate_up_to(
                self.max_dim, self.lattice.max_weight, self.lattice.max_order)
        return self._cache["indices"]

    def nonzero_indices(self):
        return [l for l in self.indices() if not l.is_zero]

    def _arrays(self):
        """(dense index matrix, dio bounds, rot bounds) over nonzero lattice."""
        if "arrays" not in self._cache:
            nz = self.nonzero_indices()
            mat = np.array([l.dense(self.max_dim) for l in nz], dtype=float)
            dio = np.array([small_divisor_bound(l, self.params) for l in nz])
            rot = np.array([rotation_bound(l, self.params) for l in nz])
            self._cache["arrays"] = (mat, dio, rot)
        return self._cache["arrays"]

    def contains(self, l: MultiIndex) -> bool:
        return (l.max_position() <= self.max_dim
                and l.weight <= self.lattice.max_weight
                and l.order <= self.lattice.max_order)

    def inner(self, l: MultiIndex) -> float:
        return l.dot(self.omega)

    def divisor(self, l: MultiIndex) -> complex:
        """The small divisor exp(i (omega,l) alpha) - 1."""
        if self.alpha is None:
            raise ValueError("context has no rotation number alpha")
        return complex(np.exp(1j * self.inner(l) * self.alpha) - 1.0)

    def diophantine_margin(self) -> float:
        """min over the lattice of |(omega,l)| - bound(l); positive iff valid."""
        mat, dio, _ = self._arrays()
        return float(np.min(np.abs(mat @ self.omega) - dio))

    def rotation_margin(self) -> float:
        """min over the lattice of dist((omega,l) alpha/2pi, Z) - bound(l)."""
        if self.alpha is None:
            raise ValueError("context has no rotation number alpha")
        mat, _, rot = self._arrays()
        t = (mat @ self.omega) * self.alpha / TWO_PI
        return float(np.min(np.abs(t - np.round(t)) - rot))

    def check(self) -> bool:
        """Re-verify both conditions over the recorded lattice."""
        ok = self.diophantine_margin() > 0.0
        if self.alpha is not None:
            ok = ok and self.rotation_margin() > 0.0
        return ok

    # -- serialization --------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "omega": [float(w) for w in self.omega],
            "alpha": None if self.alpha is None else float(self.alpha),
            "gamma0": self.params.gamma0,
            "mu": self.params.mu,
            "gamma": self.params.gamma,
            "interval": None if self.interval is None else list(self.interval),
            "lattice": {"max_weight": self.lattice.max_weight,
                        "max_order": self.lattice.max_order},
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, data: dict) -> "FrequencyContext":
        params = DiophantineParams(gamma0=data["gamma0"], mu=data["mu"],
                                   gamma=data["gamma"])
        lattice = Lattice(max_weight=data["lattice"]["max_weight"],
                          max_order=data["lattice"]["max_order"])
        interval = data.get("interval")
        return cls(omega=np.array(data["omega"], dtype=float), params=params,
                   lattice=lattice, alpha=data.get("alpha"),
                   interval=None if interval is None else tuple(interval),
                   seed=data.get("seed"))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "FrequencyContext":
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def fingerprint(self) -> tuple:
        """Value identity used by series operations to detect mixed contexts."""
        return (self.omega.tobytes(), self.alpha, self.params, self.lattice)


def _attempt_rng(seed, attempt):
    return np.random.default_rng([int(seed), int(attempt)])


def sample_frequency(max_dim: int,
                     params: DiophantineParams = DiophantineParams(),
                     lattice: Lattice = Lattice(),
                     rng_seed: int = 0,
                     max_attempts: int = 10_000) -> FrequencyContext:
    """Rejection-sample omega from [0,1]^max_dim until the whole lattice passes.

    Deterministic: attempt k draws from a seed derived from (rng_seed, k) and
    the accepted attempt is the smallest passing k.  Raises ExhaustedAttempts
    when gamma0 is too large for the lattice.
    """
    probe = FrequencyContext(omega=np.zeros(max_dim), params=params,
                             lattice=lattice)
    mat, dio, _ = probe._arrays()
    for attempt in range(max_attempts):
        omega = _attempt_rng(rng_seed, attempt).uniform(0.0, 1.0, size=max_dim)
        if np.all(np.abs(mat @ omega) > dio):
            ctx = FrequencyContext(omega=omega, params=params, lattice=lattice,
                                   seed=rng_seed)
            ctx._cache["arrays"] = (mat, dio, probe._arrays()[2])
            return ctx
    raise ExhaustedAttempts(
        f"no Diophantine frequency in {max_attempts} attempts "
        f"(gamma0={params.gamma0} too large for lattice {lattice})")


def sample_alpha(ctx: FrequencyContext,
                 interval: Tuple[float, float],
                 gamma: Optional[float] = None,
                 rng_seed: int = 0,
                 max_attempts: int = 10_000) -> float:
    """Rejection-sample alpha from [a + 2 pi gamma, b - 2 pi gamma].

    Returns alpha and records it (with the interval) on the context.  The
    shrunken sampling range keeps every resonant strip's intersection with
    [a, b] inside the checked region.
    """
    a, b = float(interval[0]), float(interval[1])
    gamma = ctx.params.gamma if gamma is None else float(gamma)
    if b - a <= 4.0 * math.pi * gamma:
        raise IntervalTooSmall(
            f"interval length {b - a} must exceed 4 pi gamma = "
            f"{4.0 * math.pi * gamma}")
    mat, _, rot = ctx._arrays()
    inner = mat @ ctx.omega
    lo, hi = a + TWO_PI * gamma, b - TWO_PI * gamma
    scaled_rot = rot * (gamma / ctx.params.gamma)
    for attempt in range(max_attempts):
        alpha = float(_attempt_rng(rng_seed, attempt).uniform(lo, hi))
        t = inner * alpha / TWO_PI
        if np.all(np.abs(t - np.round(t)) > scaled_rot):
            ctx.alpha = alpha
            ctx.interval = (a, b)
            return alpha
    raise ExhaustedAttempts(
        f"no admissible rotation number in {max_attempts} attempts "
        f"(gamma={gamma} too large for interval [{a}, {b}])")


def rejection_fraction(gamma0: float,
                       mu: float = 1.0,
                       max_dim: int = 4,
                       lattice: Lattice = Lattice(),
                       trials: int = 20_000,
                       rng_seed: int = 0) -> float:
    """Monte Carlo estimate of the rejected measure of [0,1]^max_dim.

    The resonant set has measure O(gamma0), so this should grow at most
    linearly in gamma0; used by the measure-estimate experiments.
    """
    params = DiophantineParams(gamma0=gamma0, mu=mu)
    probe = FrequencyContext(omega=np.zeros(max_dim), params=params,
                             lattice=lattice)
    mat, dio, _ = probe._arrays()
    rng = np.random.default_rng(rng_seed)
    omegas = rng.uniform(0.0, 1.0, size=(trials, max_dim))
    ok = np.all(np.abs(omegas @ mat.T) > dio[None, :], axis=1)
    return float(1.0 - np.mean(ok))
