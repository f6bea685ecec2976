"""Batch front end: frequency sampling -> maps -> KAM runs -> pendulum runs.

Exit codes: 0 success, 2 input/precondition violation, 3 numerical failure.
Validation failures never produce partial outputs (everything is computed
before anything is written).  Report paths write a PNG figure next to each
delimited output unless --no-plot is given; with --manifest a RunManifest is
recorded that `apkam replay` reproduces bit-identically.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import fixtures as fixture_mod
from . import plotting
from .apseries import APSeries1, APSeries2
from .errors import ApkamError, VALIDATION
from .frequency import (DiophantineParams, FrequencyContext, Lattice,
                        sample_alpha, sample_frequency)
from .homological import solve_difference
from .kam import InvariantCurve, KAMSchedule, kam_iterate, verify_conjugacy, \
    orbit_shadow_check
from .manifest import RunManifest
from .pendulum import (PendulumSystem, PoincareState, boundedness_experiment,
                       fit_twistmap, integrate_ivp, poincare_orbit)
from .twistmap import SmallTwistMap, TwistMap
from .util import dump_json, load_json


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _load_ctx(path) -> FrequencyContext:
    ctx = FrequencyContext.load(path)
    if not ctx.check():
        raise ApkamError(f"context {path} fails its own nonresonance checks",
                         module="frequency", kind=VALIDATION)
    return ctx


def _load_map(path, ctx):
    m = TwistMap.load(path, ctx)
    if isinstance(m, SmallTwistMap):
        return m.base, m.delta
    return m, None


class _Run:
    """Collects outputs so nothing is written until the command succeeded."""

    def __init__(self, args):
        self.args = args
        self.out_dir = args.out_dir
        os.makedirs(self.out_dir, exist_ok=True)
        self.manifest = RunManifest(
            command=args.command, argv=list(args._raw_argv),
            out_dir=self.out_dir, seed=getattr(args, "seed", None))
        self._json = []
        self._csv = []
        self._figures = []

    def path(self, name) -> str:
        return os.path.join(self.out_dir, name)

    def add_input(self, path):
        self.manifest.add_input(path)

    def emit_json(self, name, payload):
        self._json.append((self.path(name), payload))

    def emit_csv(self, name, header, rows):
        self._csv.append((self.path(name), header, rows))

    def emit_figure(self, name, render):
        if not self.args.no_plot:
            self._figures.append((self.path(name), render))

    def finish(self) -> int:
        for path, payload in self._json:
            dump_json(payload, path)
            self.manifest.add_output(path)
        for path, header, rows in self._csv:
            _write_csv(path, header, rows)
            self.manifest.add_output(path)
        for path, render in self._figures:
            render(path)
            self.manifest.add_figure(path)
        if self.args.manifest:
            self.manifest.save(self.path(self.args.manifest))
        return 0


# -- command handlers -----------------------------------------------------------


def cmd_freq_sample(args) -> int:
    run = _Run(args)
    params = DiophantineParams(gamma0=args.gamma0, mu=args.mu,
                               gamma=args.gamma)
    lattice = Lattice(max_weight=args.max_weight, max_order=args.max_order)
    ctx = sample_frequency(args.dim, params, lattice, rng_seed=args.seed,
                           max_attempts=args.attempts)
    sample_alpha(ctx, tuple(args.interval), rng_seed=args.seed,
                 max_attempts=args.attempts)
    print(f"omega = {ctx.omega.tolist()}")
    print(f"alpha = {ctx.alpha}")
    print(f"diophantine margin = {ctx.diophantine_margin():.6e}")
    print(f"rotation margin    = {ctx.rotation_margin():.6e}")
    run.emit_json(args.out, ctx.to_json())
    return run.finish()


def cmd_freq_check(args) -> int:
    run = _Run(args)
    ctx = FrequencyContext.load(args.ctx)
    run.add_input(args.ctx)
    dio = ctx.diophantine_margin()
    rot = ctx.rotation_margin() if ctx.alpha is not None else None
    ok = dio > 0 and (rot is None or rot > 0)
    print(f"lattice size       = {len(ctx.indices())}")
    print(f"diophantine margin = {dio:.6e}")
    if rot is not None:
        print(f"rotation margin    = {rot:.6e}")
    print("PASS" if ok else "FAIL")
    if not ok:
        raise ApkamError("context fails its nonresonance checks",
                         module="frequency", kind=VALIDATION)
    return run.finish()


def cmd_map_apply(args) -> int:
    run = _Run(args)
    ctx = _load_ctx(args.ctx)
    m, delta = _load_map(args.map, ctx)
    run.add_input(args.ctx)
    run.add_input(args.map)
    if delta is not None:
        small = SmallTwistMap(base=m, delta=delta)
        orbit = np.empty((args.iters + 1, 2))
        orbit[0] = (args.x, args.y)
        x, y = float(args.x), float(args.y)
        for k in range(1, args.iters + 1):
            x, y = small.apply(x, y)
            orbit[k] = (x, y)
    else:
        orbit = m.orbit(args.x, args.y, args.iters)
    print(f"final point after {args.iters} iterates: "
          f"x = {orbit[-1, 0]!r}, y = {orbit[-1, 1]!r}")
    rows = [(k, orbit[k, 0], orbit[k, 1]) for k in range(orbit.shape[0])]
    run.emit_csv(args.out, ("k", "x", "y"), rows)
    run.emit_figure(_stem(args.out) + ".png",
                    lambda p: plotting.orbit_plot(orbit, p))
    return run.finish()


def cmd_map_intersect(args) -> int:
    run = _Run(args)
    ctx = _load_ctx(args.ctx)
    m, delta = _load_map(args.map, ctx)
    run.add_input(args.ctx)
    run.add_input(args.map)
    if delta is not None:
        # the rescaling y -> delta*y preserves intersections, so the probe
        # runs on the standard form
        from .twistmap import to_standard
        m = to_standard(SmallTwistMap(base=m, delta=delta))
        ctx = m.ctx
    if args.phi:
        phi = APSeries1.from_json(ctx, load_json(args.phi))
        run.add_input(args.phi)
    else:
        const = ctx.alpha if args.phi_const is None else args.phi_const
        phi = APSeries1.constant(ctx, const)
    found, witness = m.intersection_check(phi, tuple(args.range),
                                          samples=args.samples)
    xs = np.linspace(args.range[0], args.range[1], args.samples)
    gaps = np.array([m.gap(float(x), phi) for x in xs])
    print(f"intersection found: {found}"
          + (f" (witness x = {witness!r})" if witness is not None else ""))
    run.emit_json(args.out, {"found": found, "witness": witness,
                             "gap_min": float(np.min(gaps)),
                             "gap_max": float(np.max(gaps)),
                             "samples": args.samples,
                             "range": list(args.range)})
    run.emit_csv(_stem(args.out) + ".csv", ("x", "gap"),
                 [(float(x), float(g)) for x, g in zip(xs, gaps)])
    run.emit_figure(_stem(args.out) + ".png",
                    lambda p: plotting.gap_plot(xs, gaps, witness, p))
    return run.finish()


def cmd_homological_solve(args) -> int:
    run = _Run(args)
    ctx = _load_ctx(args.ctx)
    h = APSeries2.from_json(ctx, load_json(args.h))
    run.add_input(args.ctx)
    run.add_input(args.h)
    sol, report = solve_difference(h, ctx, args.r, args.rprime, s=args.s,
                                   divisor_floor=args.divisor_floor)
    print(f"||h||_r = {report.rhs_norm!r}")
    print(f"||s||_r' = {report.solution_norm!r}")
    print(f"min divisor = {report.min_divisor!r}")
    print(f"residual = {report.residual!r}")
    run.emit_json(args.out, sol.to_json())
    run.emit_json(args.report, report.to_json())
    return run.finish()


def cmd_kam_run(args) -> int:
    run = _Run(args)
    ctx = _load_ctx(args.ctx)
    m, delta = _load_map(args.map, ctx)
    run.add_input(args.ctx)
    run.add_input(args.map)
    if delta is not None:
        from .twistmap import to_standard
        m = to_standard(SmallTwistMap(base=m, delta=delta))
        ctx = m.ctx
    schedule = KAMSchedule.for_map(m)
    curve = kam_iterate(m, ctx, schedule=schedule, mode=args.mode,
                        tol_conj=args.tol, max_stage=args.max_stage)
    print(f"stages = {len(curve.stage_log)}")
    print(f"conjugacy residual = {curve.conjugacy_residual!r}")
    rows = []
    stage_rows = []
    for est in curve.stage_log:
        q = est.Q if np.isfinite(est.Q) else None
        rows.append((est.stage, est.r_plus, est.s_plus, est.eps_out, q,
                     est.curve_residual))
        stage_rows.append({"stage": est.stage, "eps_measured": est.eps_out,
                           "Q_bound": q, "residual": est.curve_residual})
    run.emit_json(args.out, curve.to_json())
    run.emit_csv(args.log, ("stage", "r_n", "s_n", "eps_measured", "Q_bound",
                            "residual"), rows)
    if stage_rows:
        run.emit_figure(_stem(args.log) + ".png",
                        lambda p: plotting.stage_plot(stage_rows, p))
    run.emit_figure(_stem(args.out) + ".png",
                    lambda p: plotting.curve_plot(curve, p))
    return run.finish()


def cmd_verify(args) -> int:
    run = _Run(args)
    ctx = _load_ctx(args.ctx)
    m, _ = _load_map(args.map, ctx)
    curve = InvariantCurve.from_json(ctx, load_json(args.curve))
    run.add_input(args.ctx)
    run.add_input(args.map)
    run.add_input(args.curve)
    residual = verify_conjugacy(curve, m, n_samples=args.samples)
    payload = {"residual": residual, "samples": args.samples}
    print(f"conjugacy residual = {residual!r}")
    if args.shadow:
        deviation = orbit_shadow_check(curve, m, x0_count=4,
                                       n_iterates=args.shadow)
        payload["shadow_deviation"] = deviation
        payload["shadow_iterates"] = args.shadow
        print(f"shadow deviation over {args.shadow} iterates = {deviation!r}")
    if args.out:
        run.emit_json(args.out, payload)
    return run.finish()


def cmd_pendulum_simulate(args) -> int:
    run = _Run(args)
    sys_ = PendulumSystem.from_json(load_json(args.sys))
    run.add_input(args.sys)
    t_eval = np.linspace(0.0, args.tmax, args.samples)
    traj = integrate_ivp(sys_, args.x0, args.y0, (0.0, args.tmax),
                         tol=args.tol, t_eval=t_eval)
    print(f"max |y| = {float(np.max(np.abs(traj.y)))!r}")
    rows = list(zip(traj.t.tolist(), traj.x.tolist(), traj.y.tolist()))
    run.emit_csv(args.out, ("t", "x", "y"), rows)
    run.emit_figure(_stem(args.out) + ".png",
                    lambda p: plotting.trajectory_plot(traj.t, traj.x,
                                                       traj.y, p))
    return run.finish()


def cmd_pendulum_poincare(args) -> int:
    run = _Run(args)
    sys_ = PendulumSystem.from_json(load_json(args.sys))
    run.add_input(args.sys)
    orbit = poincare_orbit(sys_, PoincareState(args.theta0, args.rho),
                           args.iters, tol=args.tol)
    drift = float(orbit[:, 1].max() - orbit[:, 1].min())
    print(f"rho range over {args.iters} returns = {drift!r}")
    rows = [(k, orbit[k, 0], orbit[k, 1]) for k in range(orbit.shape[0])]
    run.emit_csv(args.out, ("k", "theta", "rho"), rows)
    run.emit_figure(_stem(args.out) + ".png",
                    lambda p: plotting.section_plot(orbit, p))
    return run.finish()


def cmd_pendulum_bounded(args) -> int:
    run = _Run(args)
    sys_ = PendulumSystem.from_json(load_json(args.sys))
    run.add_input(args.sys)
    reports = boundedness_experiment(sys_, args.y0, args.tmax, tol=args.tol)
    for rep in reports:
        print(f"y0 = {rep['y0']}: max_dev = {rep['max_dev']!r}, "
              f"growth rate = {rep['growth_rate']!r}")
    header = ("y0", "max_abs_y", "max_dev", "growth_rate", "p_star")
    rows = [tuple(rep[k] for k in header) for rep in reports]
    run.emit_csv(args.out, header, rows)
    run.emit_figure(_stem(args.out) + ".png",
                    lambda p: plotting.bounded_plot(reports, p))
    return run.finish()


def cmd_pendulum_fitmap(args) -> int:
    run = _Run(args)
    sys_ = PendulumSystem.from_json(load_json(args.sys))
    ctx = _load_ctx(args.ctx)
    run.add_input(args.sys)
    run.add_input(args.ctx)
    small, report = fit_twistmap(sys_, ctx, tuple(args.interval),
                                 args.rho_ref, fit_weight=args.weight,
                                 fit_degree=args.degree,
                                 n_theta=args.n_theta, n_mu=args.n_mu)
    print(f"delta = {report['delta']!r}")
    print(f"fit residuals: f {report['fit_residual_f']!r}, "
          f"g {report['fit_residual_g']!r}")
    print(f"fitted perturbation size = {report['eps_fit']!r}")
    run.emit_json(args.out, small.to_json())
    run.emit_json(args.report, report)
    return run.finish()


def cmd_fixtures_write(args) -> int:
    run = _Run(args)
    paths = fixture_mod.write_all(run.out_dir, eps=args.eps, seed=args.seed)
    for p in paths:
        run.manifest.add_output(p)
        print(p)
    if args.manifest:
        run.manifest.save(run.path(args.manifest))
    return 0


def cmd_replay(args) -> int:
    man = RunManifest.load(args.manifest_path)
    new_dir = args.out_dir if args.out_dir != "." else man.out_dir
    argv = list(man.argv)
    argv = _strip_flag(argv, "--out-dir")
    argv = _strip_flag(argv, "--manifest")
    code = main(argv + ["--out-dir", new_dir])
    if code != 0:
        return code
    renames = {}
    if new_dir != man.out_dir:
        for old in list(man.outputs) + list(man.figures):
            renames[old] = os.path.join(new_dir, os.path.basename(old))
    bad = man.compare_outputs(renames)
    if bad:
        print("MISMATCH: " + ", ".join(bad))
        return 3
    print(f"replay reproduced {len(man.outputs) + len(man.figures)} "
          "files bit-identically")
    return 0


def _strip_flag(argv, flag):
    out = []
    skip = False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok == flag:
            skip = True
            continue
        out.append(tok)
    return out


def _stem(name: str) -> str:
    return os.path.splitext(name)[0]


# -- parser ----------------------------------------------------------------------


def _global_flags(parser, suppress=True):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--out-dir", default=d if suppress else ".",
                        help="directory for outputs")
    parser.add_argument("--manifest", default=d, metavar="NAME",
                        help="write a replayable run manifest")
    parser.add_argument("--no-plot", action="store_true",
                        default=d if suppress else False,
                        help="skip figure rendering")
    parser.add_argument("--threads", type=int, default=d,
                        help="cap BLAS/solver thread pools")
    parser.add_argument("--seed", type=int, default=d,
                        help="seed for commands that sample")


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="apkam",
        description="invariant curves of almost periodic twist maps")
    _global_flags(top, suppress=False)
    # the same flags are accepted after any leaf subcommand; SUPPRESS keeps
    # the leaf parser from clobbering a value given earlier on the line
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    top.set_defaults(out_dir=".", manifest=None, no_plot=False,
                     threads=None, seed=0)
    sub = top.add_subparsers(dest="command", required=True)

    freq = sub.add_parser("freq", help="Diophantine frequency contexts")
    fsub = freq.add_subparsers(dest="subcommand", required=True)
    fs = fsub.add_parser("sample", parents=[common],
                         help="rejection-sample omega and alpha")
    fs.add_argument("--dim", type=int, default=4)
    fs.add_argument("--gamma0", type=float, default=1e-4)
    fs.add_argument("--mu", type=float, default=1.0)
    fs.add_argument("--gamma", type=float, default=1e-4)
    fs.add_argument("--max-weight", type=int, default=12)
    fs.add_argument("--max-order", type=int, default=12)
    fs.add_argument("--interval", type=float, nargs=2, default=(0.4, 0.6))
    fs.add_argument("--attempts", type=int, default=10_000)
    fs.add_argument("--out", default="ctx.json")
    fs.set_defaults(func=cmd_freq_sample)
    fc = fsub.add_parser("check", parents=[common], help="re-verify a context")
    fc.add_argument("ctx")
    fc.set_defaults(func=cmd_freq_check)

    mp = sub.add_parser("map", help="twist map evaluation")
    msub = mp.add_subparsers(dest="subcommand", required=True)
    ma = msub.add_parser("apply", parents=[common], help="iterate the map from a point")
    ma.add_argument("--map", required=True)
    ma.add_argument("--ctx", required=True)
    ma.add_argument("--x", type=float, default=0.0)
    ma.add_argument("--y", type=float, required=True)
    ma.add_argument("--iters", type=int, default=100)
    ma.add_argument("--out", default="orbit.csv")
    ma.set_defaults(func=cmd_map_apply)
    mi = msub.add_parser("intersect", parents=[common], help="probe the intersection property")
    mi.add_argument("--map", required=True)
    mi.add_argument("--ctx", required=True)
    mi.add_argument("--phi", default=None, help="curve series JSON")
    mi.add_argument("--phi-const", type=float, default=None,
                    help="constant curve height (default: alpha)")
    mi.add_argument("--range", type=float, nargs=2, default=(0.0, 50.0))
    mi.add_argument("--samples", type=int, default=128)
    mi.add_argument("--out", default="intersect.json")
    mi.set_defaults(func=cmd_map_intersect)

    hom = sub.add_parser("homological", help="difference-equation solves")
    hsub = hom.add_subparsers(dest="subcommand", required=True)
    hs = hsub.add_parser("solve", parents=[common], help="solve s(x+alpha) - s(x) = h(x)")
    hs.add_argument("--ctx", required=True)
    hs.add_argument("--h", required=True)
    hs.add_argument("--r", type=float, required=True)
    hs.add_argument("--rprime", type=float, required=True)
    hs.add_argument("--s", type=float, default=1.0)
    hs.add_argument("--divisor-floor", type=float, default=1e-14)
    hs.add_argument("--out", default="s.json")
    hs.add_argument("--report", default="report.json")
    hs.set_defaults(func=cmd_homological_solve)

    kam = sub.add_parser("kam", help="KAM iteration")
    ksub = kam.add_subparsers(dest="subcommand", required=True)
    kr = ksub.add_parser("run", parents=[common], help="iterate to an invariant curve")
    kr.add_argument("--map", required=True)
    kr.add_argument("--ctx", required=True)
    kr.add_argument("--mode", choices=("paper", "practical"),
                    default="practical")
    kr.add_argument("--tol", type=float, default=1e-10)
    kr.add_argument("--max-stage", type=int, default=8)
    kr.add_argument("--out", default="curve.json")
    kr.add_argument("--log", default="stages.csv")
    kr.set_defaults(func=cmd_kam_run)

    ver = sub.add_parser("verify", parents=[common], help="conjugacy residual of a curve")
    ver.add_argument("--curve", required=True)
    ver.add_argument("--map", required=True)
    ver.add_argument("--ctx", required=True)
    ver.add_argument("--samples", type=int, default=256)
    ver.add_argument("--shadow", type=int, default=0,
                     help="also run an orbit shadow check of this length")
    ver.add_argument("--out", default=None)
    ver.set_defaults(func=cmd_verify)

    pen = sub.add_parser("pendulum", help="forced pendulum experiments")
    psub = pen.add_subparsers(dest="subcommand", required=True)
    ps = psub.add_parser("simulate", parents=[common], help="integrate the equation of motion")
    ps.add_argument("--sys", required=True)
    ps.add_argument("--x0", type=float, default=0.0)
    ps.add_argument("--y0", type=float, required=True)
    ps.add_argument("--tmax", type=float, default=200.0)
    ps.add_argument("--tol", type=float, default=1e-9)
    ps.add_argument("--samples", type=int, default=400)
    ps.add_argument("--out", default="traj.csv")
    ps.set_defaults(func=cmd_pendulum_simulate)
    pp = psub.add_parser("poincare", parents=[common], help="iterate the return map")
    pp.add_argument("--sys", required=True)
    pp.add_argument("--rho", type=float, required=True)
    pp.add_argument("--theta0", type=float, default=0.3)
    pp.add_argument("--iters", type=int, default=100)
    pp.add_argument("--tol", type=float, default=1e-12)
    pp.add_argument("--out", default="section.csv")
    pp.set_defaults(func=cmd_pendulum_poincare)
    pb = psub.add_parser("bounded", parents=[common], help="boundedness dichotomy experiment")
    pb.add_argument("--sys", required=True)
    pb.add_argument("--y0", type=float, action="append", required=True)
    pb.add_argument("--tmax", type=float, default=200.0)
    pb.add_argument("--tol", type=float, default=1e-9)
    pb.add_argument("--out", default="bounded.csv")
    pb.set_defaults(func=cmd_pendulum_bounded)
    pf = psub.add_parser("fitmap", parents=[common], help="fit the return map as a twist map")
    pf.add_argument("--sys", required=True)
    pf.add_argument("--ctx", required=True)
    pf.add_argument("--rho-ref", type=float, required=True)
    pf.add_argument("--interval", type=float, nargs=2, default=(0.4, 0.6))
    pf.add_argument("--weight", type=int, default=3)
    pf.add_argument("--degree", type=int, default=2)
    pf.add_argument("--n-theta", type=int, default=160)
    pf.add_argument("--n-mu", type=int, default=5)
    pf.add_argument("--out", default="fitmap.json")
    pf.add_argument("--report", default="fit_report.json")
    pf.set_defaults(func=cmd_pendulum_fitmap)

    fx = sub.add_parser("fixtures", help="bundled deterministic fixtures")
    xsub = fx.add_subparsers(dest="subcommand", required=True)
    xw = xsub.add_parser("write", parents=[common], help="materialize every fixture")
    xw.add_argument("--eps", type=float, default=1e-6)
    xw.set_defaults(func=cmd_fixtures_write)

    rp = sub.add_parser("replay", parents=[common], help="re-run a manifest and compare bytes")
    rp.add_argument("manifest_path")
    rp.set_defaults(func=cmd_replay)
    return top


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args._raw_argv = argv
    try:
        if args.threads:
            try:
                from threadpoolctl import threadpool_limits
            except ImportError:
                print("warning: threadpoolctl not installed, --threads has "
                      "no effect", file=sys.stderr)
            else:
                with threadpool_limits(limits=args.threads):
                    return args.func(args)
        return args.func(args)
    except ApkamError as exc:
        print(f"error[{exc.module}/{exc.kind}]: {exc}", file=sys.stderr)
        return 2 if exc.kind == VALIDATION else 3
    except (json.JSONDecodeError, FileNotFoundError, KeyError) as exc:
        print(f"error[cli/validation]: bad input: {exc!r}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error[cli/validation]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
