"""Deterministic bundled fixtures: contexts, maps, and pendulum systems.

Everything here is rebuilt from fixed seeds rather than shipped as data, so
the fixtures are bit-stable by construction and `apkam fixtures write` can
materialize them anywhere.
"""

from __future__ import annotations

import os

from .apseries import AnalyticityWindow, APSeries1, APSeries2
from .frequency import (DiophantineParams, FrequencyContext, Lattice,
                        sample_alpha, sample_frequency)
from .multiindex import MultiIndex
from .pendulum import PendulumSystem, default_system
from .twistmap import TwistMap
from .util import dump_json


def default_context(seed: int = 0, max_dim: int = 4,
                    interval=(0.4, 0.6)) -> FrequencyContext:
    """The standard 4-frequency Diophantine context with a rotation number."""
    ctx = sample_frequency(max_dim, DiophantineParams(), Lattice(),
                          rng_seed=seed)
    sample_alpha(ctx, interval, rng_seed=seed)
    return ctx


def intro_perturbation(ctx: FrequencyContext, eps: float = 1e-6,
                       n_modes: int = 4) -> APSeries2:
    """sum over n of (eps / 2^n) cos(omega_n x)."""
    phi = APSeries2.zero(ctx)
    for n in range(1, n_modes + 1):
        phi = phi + APSeries2.cosine(ctx, MultiIndex.unit(n), eps / 2 ** n)
    return phi


def intro_map(ctx: FrequencyContext, eps: float = 1e-6) -> TwistMap:
    """Standard-map-like fixture f = g = phi with the intersection property.

    The map is the composition of the vertical shear y -> y + phi(x) (phi has
    zero mean, so the shear is exact) with the integrable twist, hence exact
    symplectic.
    """
    phi = intro_perturbation(ctx, eps)
    return TwistMap(f=phi, g=phi, ctx=ctx, annulus=(0.4, 0.6),
                    window=AnalyticityWindow(0.5, 0.05))


def single_mode_map(ctx: FrequencyContext, eps: float = 1e-6) -> TwistMap:
    """One conjugate mode pair only: f = g = eps cos(omega_1 x)."""
    phi = APSeries2.cosine(ctx, MultiIndex.unit(1), eps)
    return TwistMap(f=phi, g=phi, ctx=ctx, annulus=(0.4, 0.6),
                    window=AnalyticityWindow(0.5, 0.05))


def pendulum_fixture(ctx: FrequencyContext, kind: str) -> PendulumSystem:
    """Named pendulum configurations used across tests and the CLI.

    trapped    -- G = -cos x, single-mode mean-zero forcing (bounded branch)
    growing    -- G = -cos x, p = 1 (unbounded branch, rate p*/2 = 0.5)
    autonomous -- G = -cos x, p = 0 (energy is a first integral)
    modulated  -- time-modulated G and mean-zero forcing (generic asymptotics)
    """
    if kind == "trapped":
        return default_system(ctx, p_amp=1.0, p_mean=0.0)
    if kind == "growing":
        return default_system(ctx, p_amp=0.0, p_mean=1.0)
    if kind == "autonomous":
        return default_system(ctx, p_amp=0.0, p_mean=0.0)
    if kind == "modulated":
        return default_system(ctx, p_amp=0.5, p_mean=0.0, modulation=0.3)
    raise ValueError(f"unknown pendulum fixture {kind!r}")


def write_all(out_dir: str, eps: float = 1e-6, seed: int = 0) -> list:
    """Materialize every bundled fixture as JSON; returns the paths."""
    ctx = default_context(seed=seed)
    paths = []

    def emit(name, payload):
        path = os.path.join(out_dir, name)
        dump_json(payload, path)
        paths.append(path)

    emit("ctx.json", ctx.to_json())
    emit("map_intro.json", intro_map(ctx, eps).to_json())
    emit("map_single.json", single_mode_map(ctx, eps).to_json())
    for kind in ("trapped", "growing", "autonomous", "modulated"):
        emit(f"sys_{kind}.json", pendulum_fixture(ctx, kind).to_json())
    phi = APSeries1.constant(ctx, ctx.alpha)
    emit("phi_flat.json", phi.to_json())
    return paths
