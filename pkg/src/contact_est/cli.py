"""Command-line front end.

Every command writes its results plus ``manifest.json`` into ``--out``.
Exit codes:

====  ==========================================================
0     success
1     unexpected internal error
2     malformed input or invalid argument
3     a solver did not converge (best-effort results are written)
4     degenerate configuration (singular contact or sensitivity system)
5     ``gradcheck`` found an audit below its pass fraction
====  ==========================================================
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .errors import (
    ContactEstError, ConvergenceError, DegeneracyError, DegenerateQueryError, IllConditionedError,
    InvalidArgumentError,
)

log = logging.getLogger("contact_est")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2
EXIT_NONCONVERGED = 3
EXIT_DEGENERATE = 4
EXIT_AUDIT = 5

DATA_DIR = Path(__file__).resolve().parent / "data"
DEFAULT_CONFIGS = {"estimate": "peg_rect", "landscape": "hole_offset", "localize": "three_link",
                   "synthesize": "peg_rect"}


class CommandFailed(Exception):
    """Carries a non-zero exit code after results were written."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ------------------------------------------------------------------ output

def _clean(obj):
    """JSON-safe copy: arrays to lists, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


class Run:
    """Collects outputs and statistics for the manifest."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = list(argv)
        self.out = Path(args.out)
        self.outputs: list[str] = []
        self.configs: list[str] = []
        self.stats: dict = {}
        self.t0 = time.perf_counter()

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.out / name
        if str(p) not in self.outputs:
            self.outputs.append(str(p))
        return p

    def write_json(self, name: str, obj) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(_clean(obj), indent=1) + "\n")
        return p

    def write_csv(self, name: str, header, rows) -> Path:
        p = self.path(name)
        with p.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        return p

    def say(self, text: str) -> None:
        if not self.args.quiet:
            print(text)

    def manifest(self, exit_code: int) -> dict:
        skip = {"func", "quiet", "out"}
        options = {k: v for k, v in vars(self.args).items() if k not in skip}
        return {
            "command": self.args.command,
            "argv": self.argv,
            "config_paths": self.configs,
            "seed": self.args.seed,
            "options": _clean(options),
            "out_dir": str(self.out),
            "outputs": list(self.outputs),
            "tool_version": __version__,
            "backend": kernels.BACKEND,
            "python": platform.python_version(),
            "threads": int(os.environ.get("CONTACT_EST_THREADS", "1") or 1),
            "exit_code": exit_code,
            "statistics": _clean(self.stats),
            "wall_time": time.perf_counter() - self.t0,
        }


# ----------------------------------------------------------------- parsing

def parse_pose(text: str):
    """Pose from JSON text, a JSON file, ``x,y,z`` or ``x,y,z,rx,ry,rz`` (rotation vector)."""
    from .pose import Pose

    text = text.strip()
    try:
        if text.startswith("{"):
            return Pose.from_dict(json.loads(text))
        if Path(text).is_file():
            return Pose.from_dict(json.loads(Path(text).read_text()))
        vals = [float(v) for v in text.split(",")]
    except (ValueError, TypeError, KeyError) as exc:
        raise InvalidArgumentError(f"cannot parse pose '{text}': {exc}") from None
    if len(vals) == 3:
        return Pose(vals, [1.0, 0.0, 0.0, 0.0])
    if len(vals) == 6:
        return Pose.from_rotvec(vals[:3], vals[3:])
    raise InvalidArgumentError(f"pose '{text}' needs 3 or 6 comma-separated numbers")


def load_shape(ref: str, smoothness: float | None = None):
    """Geometry from a file path, a shipped geometry name or a built-in fixture name."""
    from . import shapes
    from .geometry import load_geometry

    p = Path(ref)
    if not p.is_file() and (DATA_DIR / "geometries" / f"{ref}.json").is_file():
        p = DATA_DIR / "geometries" / f"{ref}.json"
    if p.is_file():
        shape, _ = load_geometry(p)
    elif ref == "square_prism":
        shape = shapes.square_prism()
    elif ref == "cube":
        shape = shapes.cube()
    else:
        # load_geometry raises the line-referenced/missing-file error
        shape, _ = load_geometry(p)
    return shape.with_smoothness(smoothness) if smoothness is not None else shape


def resolve_config(ref: str | None, command: str) -> Path:
    ref = ref or DEFAULT_CONFIGS[command]
    p = Path(ref)
    if not p.is_file():
        for cand in (f"{ref}.json", f"peg_{ref}.json"):
            if (DATA_DIR / "scenarios" / cand).is_file():
                return DATA_DIR / "scenarios" / cand
    return p


def _scenario(run: Run, kind: str | None = None):
    from .scenarios.config import load_scenario

    path = resolve_config(run.args.config, run.args.command)
    run.configs.append(str(path))
    sc = load_scenario(path)
    if kind is not None and sc.kind != kind:
        raise InvalidArgumentError(f"{run.args.command} needs a '{kind}' scenario, got '{sc.kind}'")
    return sc


def _measurements(run: Run, sc):
    """Measurements from ``--measurements`` or synthesized from the config truth."""
    from .scenarios.config import dump_measurements, load_measurements

    a = run.args
    if a.measurements:
        run.configs.append(str(a.measurements))
        return load_measurements(a.measurements), None
    xi = np.asarray(a.truth, dtype=float) if a.truth else None
    meas = sc.synthesize(xi, seed=a.seed, noise_sigma=a.noise)
    truth = xi if xi is not None else sc.truth.get("xi")
    run.path("measurements.json").write_text(dump_measurements(meas) + "\n")
    return meas, truth


# ----------------------------------------------------------------- commands

def cmd_feature(run: Run) -> int:
    from .contact import ContactQuery, FeatureSolverOptions, differentiate_features, solve_features

    a = run.args
    q = ContactQuery(load_shape(a.geom_a, a.smoothness), load_shape(a.geom_b, a.smoothness),
                     parse_pose(a.pose_a), parse_pose(a.pose_b))
    opts = FeatureSolverOptions(tolerance=a.tolerance, max_iterations=a.max_iterations)
    out = {"converged": True}
    t0 = time.perf_counter()
    try:
        f = solve_features(q, opts)
    except ConvergenceError as exc:
        out.update(converged=False, features=exc.best.to_dict())
        run.stats["iterations"] = exc.iterations
        run.write_json("features.json", out)
        raise CommandFailed(EXIT_NONCONVERGED, str(exc)) from exc
    out["features"] = f.to_dict()
    run.stats["iterations"] = f.iterations
    # timings go to the manifest only, so result files stay reproducible
    run.stats["solve_time"] = time.perf_counter() - t0
    if not a.no_derivatives:
        t0 = time.perf_counter()
        out["derivatives"] = differentiate_features(f, q).to_dict()
        run.stats["differentiate_time"] = time.perf_counter() - t0
    run.write_json("features.json", out)
    run.say(f"sigma={f.growth:.17g} gap={f.gap:.17g} iterations={f.iterations} residual={f.residual_norm:.3e}")
    return EXIT_OK


def cmd_benchmark(run: Run) -> int:
    from .benchmark import feature_benchmark

    a = run.args
    names = a.geometries or ["apple", "mustard", "sponge"]
    shapes = {}
    for n in names:
        shapes[Path(n).stem] = load_shape(n)
        run.configs.append(n)
    rows = feature_benchmark(shapes, a.queries, a.seed, a.max_iterations, a.tolerance, a.per_pair)
    header = ["pair", "max_iterations", "n_queries", "converged_fraction", "mean_iterations", "AT_us", "MLR"]
    run.write_csv("benchmark.csv", header, [
        [r.pair, r.max_iterations, r.n_queries, r.converged_fraction, r.mean_iterations, r.mean_time_us, r.mlr]
        for r in rows])
    run.write_json("benchmark.json", {"backend": kernels.BACKEND, "rows": [r.to_dict() for r in rows]})
    for r in rows:
        run.say(f"{r.pair:>24s} cap={r.max_iterations:3d} conv={r.converged_fraction:.3f} "
                f"MLR={r.mlr:.3f} AT={r.mean_time_us:.1f}us")
    run.stats["rows"] = len(rows)
    return EXIT_OK


def cmd_solve_forces(run: Run) -> int:
    from .forces import ContactStack, ForceSolverOptions, StackDerivatives, differentiate, kkt_residuals, solve

    a = run.args
    run.configs.append(a.stack)
    try:
        data = json.loads(Path(a.stack).read_text())
    except OSError as exc:
        raise InvalidArgumentError(f"cannot read stack file {a.stack}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"{a.stack}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    try:
        stack = ContactStack.from_dict(data)
    except KeyError as exc:
        raise InvalidArgumentError(f"{a.stack}: missing field {exc}") from None
    opts = ForceSolverOptions(max_sweeps=a.max_sweeps, tolerance=a.tolerance, order=a.order, ridge=a.ridge)
    try:
        sol = solve(stack, opts)
    except ConvergenceError as exc:
        run.write_json("forces.json", {"converged": False, "solution": exc.best.to_dict() if exc.best else None})
        raise CommandFailed(EXIT_NONCONVERGED, str(exc)) from exc
    stat, comp, feas = kkt_residuals(sol, stack)
    out = {"converged": True, "solution": sol.to_dict(),
           "kkt": {"stationarity": stat, "complementarity": comp, "min_cone_residual": feas}}
    if "dP" in data:
        deriv = StackDerivatives(dP=np.asarray(data["dP"], float), dgaps=np.asarray(data["dgaps"], float))
        sens = differentiate(sol, stack, deriv)
        out["sensitivity"] = {"dforces": sens.dforces, "dmultipliers": sens.dmultipliers,
                              "fallback_used": sens.fallback_used, "condition": sens.condition}
    run.stats.update(sweeps=sol.sweeps, method=sol.method)
    run.write_json("forces.json", out)
    run.say(f"method={sol.method} sweeps={sol.sweeps} stationarity={stat:.3e} complementarity={comp:.3e}")
    return EXIT_OK


def _gn_options(a):
    from .estimator import GaussNewtonOptions

    return GaussNewtonOptions(max_iterations=a.max_iterations)


def cmd_estimate(run: Run) -> int:
    from .estimator import estimate

    a = run.args
    sc = _scenario(run, "peg")
    meas, truth = _measurements(run, sc)
    prob = sc.problem(meas)
    res = estimate(prob, a.starts, seed=a.seed, options=_gn_options(a))
    out = {"result": res.to_dict(), "parametrization": sc.parametrization.description}
    if truth is not None:
        out["truth"] = truth
        out["error"] = np.abs(res.xi - np.asarray(truth)).tolist()
    run.stats.update(iterations=[r.iterations for r in res.runs], best_start=res.best_start,
                     solve_time=res.wall_time)
    run.write_json("estimate.json", out)
    run.say(f"xi={np.array2string(res.xi, precision=17)} cost={res.cost:.3e} converged={res.converged}")
    if not res.converged:
        raise CommandFailed(EXIT_NONCONVERGED, "no start converged; best iterate written")
    return EXIT_OK


def cmd_landscape(run: Run) -> int:
    from .estimator import grid_local_minima, landscape

    a = run.args
    sc = _scenario(run, "peg")
    meas, truth = _measurements(run, sc)
    if a.episodes:
        meas = meas[:a.episodes]
    prob = sc.problem(meas)
    par = sc.parametrization
    axes = tuple(a.axes)
    if a.range:
        ranges = ((a.range[0], a.range[1]),) * 2
    else:
        ranges = tuple((float(par.lower[i]), float(par.upper[i])) for i in axes)
    rows = landscape(prob, axes, ranges, a.resolution)
    header = [f"xi{i}" for i in range(par.dimension)] + ["cost", "min_gap", "force_norm", "flag"]
    run.write_csv("landscape.csv", header,
                  [list(r.coords) + [r.cost, r.min_gap, r.force_norm, r.flag] for r in rows])
    R = a.resolution
    costs = np.array([r.cost for r in rows])
    gi = int(np.nanargmin(costs))
    minima = grid_local_minima(rows, R)
    cell = [(hi - lo) / (R - 1) for lo, hi in ranges]
    summary = {
        "episodes": len(meas), "resolution": R, "ranges": ranges, "axes": axes,
        "global_minimum": {"coords": rows[gi].coords, "cost": rows[gi].cost},
        "local_minima": [{"coords": rows[i * R + j].coords, "cost": rows[i * R + j].cost} for i, j in minima],
        "failed_nodes": int(sum(r.flag != "ok" for r in rows)),
        "cell": cell,
    }
    if truth is not None:
        t = np.asarray(truth)[list(axes)]
        g = np.asarray(rows[gi].coords)[list(axes)]
        summary["truth"] = truth
        summary["global_within_one_cell"] = bool(np.all(np.abs(g - t) <= np.asarray(cell) * (1 + 1e-9)))
    run.stats.update(nodes=len(rows), local_minima=len(minima))
    run.write_json("landscape_summary.json", summary)
    run.say(f"{len(minima)} grid-local minima; global minimum at {rows[gi].coords} cost {rows[gi].cost:.3e}")
    return EXIT_OK


def cmd_localize(run: Run) -> int:
    from .estimator import estimate

    a = run.args
    sc = _scenario(run, "localization")
    meas, truth = _measurements(run, sc)
    prob = sc.problem(meas)
    res = estimate(prob, a.starts, seed=a.seed, options=_gn_options(a))
    par = sc.parametrization
    point = par.contact_point(res.xi)
    out = {"result": res.to_dict(), "contact_point": point,
           "normal": -res.xi / np.linalg.norm(res.xi), "link": par.link}
    if truth is not None:
        tp = par.contact_point(truth)
        out.update(truth=truth, true_contact_point=tp, point_error=float(np.linalg.norm(point - tp)))
    run.stats.update(iterations=[r.iterations for r in res.runs], best_start=res.best_start,
                     solve_time=res.wall_time)
    run.write_json("localize.json", out)
    run.say(f"contact point {np.array2string(point, precision=6)} cost={res.cost:.3e}")
    if not res.converged:
        raise CommandFailed(EXIT_NONCONVERGED, "no start converged; best iterate written")
    return EXIT_OK


def cmd_trace(run: Run) -> int:
    from .contact import ContactQuery, FeatureSolverOptions, degeneration_trace, trace_smoothness
    from .pose import Pose

    a = run.args
    A = load_shape(a.geom_a, a.smoothness)
    B = load_shape(a.geom_b, a.smoothness)
    q = ContactQuery(A, B, Pose.identity(), Pose([a.separation, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]))
    rows = degeneration_trace(q, tuple(a.range), a.step, options=FeatureSolverOptions(max_iterations=a.max_iterations))
    run.write_csv("trace.csv", ["angle_deg", "wx", "wy", "wz", "sigma", "iters", "residual"],
                  [[r.angle_deg, *r.witness, r.sigma, r.iterations, r.residual] for r in rows])
    stats = trace_smoothness(rows)
    stats.update(rows=len(rows), failed=int(sum(not r.converged for r in rows)), smoothness=A.smoothness)
    run.write_json("trace_summary.json", stats)
    run.stats.update(rows=len(rows), failed=stats["failed"])
    run.say(f"{len(rows)} rows, jump ratio {stats['jump_ratio']:.3f}, max slope {stats['max_slope']:.3f}")
    if stats["failed"]:
        raise CommandFailed(EXIT_NONCONVERGED, f"{stats['failed']} trace rows did not converge")
    return EXIT_OK


def cmd_gradcheck(run: Run) -> int:
    from .audit import AUDITS, run_suite

    a = run.args
    names = a.only or list(AUDITS)
    for n in names:
        if n not in AUDITS:
            raise InvalidArgumentError(f"unknown audit '{n}' (choose from {', '.join(AUDITS)})")
    rows = run_suite(a.seed, a.scale, names)
    run.write_json("gradcheck.json", {"rows": [r.to_dict() for r in rows]})
    run.say(f"{'audit':<26s}{'checked':>9s}{'fraction':>10s}{'max err':>12s}{'tol':>9s}  result")
    for r in rows:
        run.say(f"{r.name:<26s}{r.checked:>9d}{r.fraction:>10.3f}{r.max_error:>12.3e}{r.tolerance:>9.0e}  "
                f"{'PASS' if r.passed else 'FAIL'}")
    run.stats["failed"] = [r.name for r in rows if not r.passed]
    if run.stats["failed"]:
        raise CommandFailed(EXIT_AUDIT, "audits failed: " + ", ".join(run.stats["failed"]))
    return EXIT_OK


def cmd_synthesize(run: Run) -> int:
    a = run.args
    sc = _scenario(run)
    if not a.truth and sc.truth.get("xi") is None:
        raise InvalidArgumentError("scenario has no truth; pass --truth")
    meas, truth = _measurements(run, sc)
    run.write_json("truth.json", {"xi": truth, "seed": a.seed, "noise": a.noise})
    run.say(f"{len(meas)} episodes written")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="random seed (default 0)")
    p.add_argument("--out", default=d("contact_est_out"), help="output directory")
    p.add_argument("--config", default=d(None), help="scenario config path or shipped name")
    p.add_argument("--quiet", action="store_true", default=d(False), help="no summary on stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="contact-est", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, True)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=func)
        return sp

    def data_flags(sp, starts):
        sp.add_argument("--measurements", help="measurement JSON (default: synthesize from the config truth)")
        sp.add_argument("--truth", type=float, nargs="+", help="ground truth used for synthesis")
        sp.add_argument("--noise", type=float, default=None, help="measurement noise std for synthesis")
        if starts:
            sp.add_argument("--starts", type=int, default=starts, help="number of random starts")
            sp.add_argument("--max-iterations", type=int, default=100)

    sp = add("feature", cmd_feature, "contact features (and derivatives) for one body pair")
    sp.add_argument("--geom-a", required=True)
    sp.add_argument("--geom-b", required=True)
    sp.add_argument("--pose-a", default="0,0,0")
    sp.add_argument("--pose-b", required=True)
    sp.add_argument("--smoothness", type=float, default=None, help="override the files' p")
    sp.add_argument("--no-derivatives", action="store_true")
    sp.add_argument("--tolerance", type=float, default=1e-10)
    sp.add_argument("--max-iterations", type=int, default=20)

    sp = add("benchmark", cmd_benchmark, "feature-solver convergence table on random pose pairs")
    sp.add_argument("--geometries", nargs="+", default=None)
    sp.add_argument("--queries", type=int, default=1000)
    sp.add_argument("--max-iterations", type=int, nargs="+", default=[20])
    sp.add_argument("--tolerance", type=float, default=1e-10)
    sp.add_argument("--per-pair", action="store_true")

    sp = add("solve-forces", cmd_solve_forces, "solve one contact-force problem from a stack file")
    sp.add_argument("--stack", required=True, help="JSON with P, gaps, mu, gamma and optional Sigma, k0, eps, dP, dgaps")
    sp.add_argument("--order", choices=["forward", "reverse"], default="forward")
    sp.add_argument("--max-sweeps", type=int, default=500)
    sp.add_argument("--tolerance", type=float, default=1e-10)
    sp.add_argument("--ridge", type=float, default=0.0)

    sp = add("estimate", cmd_estimate, "multi-start pose-parameter estimation on a peg scenario")
    data_flags(sp, 3)

    sp = add("landscape", cmd_landscape, "cost landscape on a 2-D grid")
    data_flags(sp, 0)
    sp.add_argument("--episodes", type=int, default=None, help="use only the first K episodes")
    sp.add_argument("--resolution", type=int, default=41)
    sp.add_argument("--axes", type=int, nargs=2, default=[0, 1])
    sp.add_argument("--range", type=float, nargs=2, default=None, help="grid range for both axes")

    sp = add("localize", cmd_localize, "single-contact localization from joint torques")
    data_flags(sp, 10)

    sp = add("trace-degeneration", cmd_trace, "witness-point trace while rotating one body")
    sp.add_argument("--geom-a", default="square_prism")
    sp.add_argument("--geom-b", default="square_prism")
    sp.add_argument("--smoothness", type=float, default=20.0)
    sp.add_argument("--separation", type=float, default=2.5)
    sp.add_argument("--range", type=float, nargs=2, default=[0.0, 90.0])
    sp.add_argument("--step", type=float, default=0.1)
    sp.add_argument("--max-iterations", type=int, default=20)

    sp = add("gradcheck", cmd_gradcheck, "finite-difference audit of every analytic derivative")
    sp.add_argument("--scale", type=float, default=1.0, help="multiply the default case counts")
    sp.add_argument("--only", nargs="+", default=None)

    sp = add("synthesize", cmd_synthesize, "write synthetic measurements for a scenario")
    data_flags(sp, 0)

    sp = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    sp.add_argument("manifest")
    sp.add_argument("--out", default=None, help="output directory (default: a sibling '<out>_replay')")
    sp.set_defaults(func=None)
    return parser


def _replay_argv(manifest_path: str, out: str | None) -> list[str]:
    try:
        m = json.loads(Path(manifest_path).read_text())
        argv = list(m["argv"])
        old_out = m.get("out_dir")
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InvalidArgumentError(f"cannot read manifest {manifest_path}: {exc}") from None
    new_out = out or (f"{old_out}_replay" if old_out else "contact_est_out_replay")
    cleaned = []
    skip = False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok == "--out":
            skip = True
            continue
        if tok.startswith("--out="):
            continue
        cleaned.append(tok)
    return cleaned + ["--out", new_out]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if args.command == "replay":
        try:
            return main(_replay_argv(args.manifest, args.out))
        except InvalidArgumentError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT
    run = Run(args, argv)
    code = EXIT_OK
    try:
        code = args.func(run)
    except CommandFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = exc.code
    except (InvalidArgumentError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_INPUT
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_NONCONVERGED
    except (DegeneracyError, DegenerateQueryError, IllConditionedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_DEGENERATE
    except ContactEstError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort boundary
        log.exception("unexpected error")
        print(f"internal error: {exc!r}", file=sys.stderr)
        code = EXIT_INTERNAL
    try:
        run.write_json("manifest.json", run.manifest(code))
    except OSError as exc:
        print(f"error: cannot write manifest: {exc}", file=sys.stderr)
        return code or EXIT_INPUT
    return code


if __name__ == "__main__":
    sys.exit(main())
