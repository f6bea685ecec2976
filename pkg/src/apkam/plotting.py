"""Figure rendering for the CLI report paths (PNG next to each CSV/JSON).

Uses the Agg backend so everything works headless; figures carry fixed
metadata so replays reproduce them byte-identically.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": "apkam"}
_DPI = 150


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI, metadata=_META)
    plt.close(fig)
    return path


def stage_plot(rows, path):
    """Per-stage decay: measured perturbation, Q bound, conjugacy residual."""
    stages = [r["stage"] for r in rows]
    eps = [r["eps_measured"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(stages, eps, "o-", label="measured perturbation")
    q = [r["Q_bound"] for r in rows]
    # the bound can be astronomically conservative; drawn only when it fits
    # on the same axes without degenerating the log ticker
    if all(v is not None and np.isfinite(v) for v in q) \
            and max(q) < 1e30 * max(max(eps), 1e-300):
        ax.semilogy(stages, q, "s--", label="Q bound")
    ax.semilogy(stages, [r["residual"] for r in rows], "^-",
                label="conjugacy residual")
    ax.set_xlabel("stage")
    ax.set_ylabel("size")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    return _finish(fig, path)


def curve_plot(curve, path, span: float = 60.0, n: int = 600):
    """The invariant curve: correction u and action profile v over xi."""
    xi = np.linspace(0.0, span, n)
    u = np.asarray(curve.u.evaluate(xi), dtype=float)
    v = np.asarray(curve.v.evaluate(xi), dtype=float)
    fig, axes = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    axes[0].plot(xi, u)
    axes[0].set_ylabel("u(xi)")
    axes[1].plot(xi, v)
    axes[1].axhline(curve.alpha, color="k", lw=0.6, ls=":")
    axes[1].set_ylabel("v(xi)")
    axes[1].set_xlabel("xi")
    for ax in axes:
        ax.grid(alpha=0.3)
    return _finish(fig, path)


def orbit_plot(orbit, path):
    """Map iterates: action against iterate index, angle increments."""
    k = np.arange(orbit.shape[0])
    fig, axes = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    axes[0].plot(k[:-1], np.diff(orbit[:, 0]), ".", ms=3)
    axes[0].set_ylabel("x step")
    axes[1].plot(k, orbit[:, 1], ".", ms=3)
    axes[1].set_ylabel("y")
    axes[1].set_xlabel("iterate")
    for ax in axes:
        ax.grid(alpha=0.3)
    return _finish(fig, path)


def gap_plot(xs, gaps, witness, path):
    """Signed curve-vs-image gap with the located intersection witness."""
    fig, ax = plt.subplots(figsize=(6.5, 4))
    ax.plot(xs, gaps, "-")
    ax.axhline(0.0, color="k", lw=0.6)
    if witness is not None:
        ax.axvline(witness, color="r", lw=0.8, ls="--",
                   label=f"witness x = {witness:.6g}")
        ax.legend()
    ax.set_xlabel("x")
    ax.set_ylabel("gap")
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def trajectory_plot(t, x, y, path):
    fig, axes = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    axes[0].plot(t, x, lw=0.8)
    axes[0].set_ylabel("x")
    axes[1].plot(t, y, lw=0.8)
    axes[1].set_ylabel("y")
    axes[1].set_xlabel("t")
    for ax in axes:
        ax.grid(alpha=0.3)
    return _finish(fig, path)


def section_plot(orbit, path):
    """Poincare section: (theta mod 2 pi, rho) scatter."""
    fig, ax = plt.subplots(figsize=(6.5, 4))
    ax.plot(np.mod(orbit[:, 0], 2.0 * np.pi), orbit[:, 1], ".", ms=3)
    ax.set_xlabel("theta mod 2 pi")
    ax.set_ylabel("rho")
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def bounded_plot(reports, path):
    y0 = [r["y0"] for r in reports]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    axes[0].plot(y0, [r["max_dev"] for r in reports], "o-")
    axes[0].set_xlabel("y0")
    axes[0].set_ylabel("max |y - y0|")
    axes[1].plot(y0, [r["growth_rate"] for r in reports], "o-")
    if reports and reports[0]["p_star"]:
        axes[1].axhline(reports[0]["p_star"] / 2.0, color="r", lw=0.8,
                        ls="--", label="p*/2")
        axes[1].legend()
    axes[1].set_xlabel("y0")
    axes[1].set_ylabel("fitted dy/dt")
    for ax in axes:
        ax.grid(alpha=0.3)
    return _finish(fig, path)
