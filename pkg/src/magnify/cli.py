"""Command-line front end.

Exit codes: 0 when the run certifies/converges/finds nothing wrong, 1 when it
completes with a refusal or a finding, 2 on usage or input errors. A report
is written for exits 0 and 1 whenever ``--out`` is given.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .certify import (
    FirstOrderOptions,
    QuadraticOptions,
    certify_first_order,
    certify_quadratic,
    falsify_injectivity,
    scale_sweep,
    uniform_diff_modulus,
)
from .magnification import DeltaLadder, fit_expansion, remainder_slope
from .polymap import MapSyntaxError, exact_expansion, load_map
from .report import SERIES, build_report, dumps, emit_csv
from .solver import invert_degenerate, invert_regular

log = logging.getLogger("magnify")

COMMANDS = ("expand", "certify", "invert", "sweep", "falsify")


class UsageError(Exception):
    pass


def _vector(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return v


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="magnify", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--map", dest="map_path", help="polynomial map file")
    common.add_argument("--point", type=_vector, help="base point, e.g. 0,0")
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--out", help="write the JSON report here")
    common.add_argument("--csv", help="write a plot series here")
    common.add_argument("--series", help="series for --csv: remainder, sweep, modulus")
    common.add_argument("--config", help="JSON config file; its values override flags")
    common.add_argument("--normalize", action="store_true", help="omit timings from the report")
    common.add_argument("--delta0", type=_positive, default=1e-2)
    common.add_argument("--ratio", type=_positive, default=0.5)
    common.add_argument("--levels", type=int, default=8)

    p = sub.add_parser("expand", parents=[common], help="Taylor data and remainder scaling")
    p.add_argument("--order", type=int, default=2, choices=(1, 2, 3))
    p.add_argument("--fit", action="store_true", help="fit from evaluations instead of exact data")
    p.add_argument("--directions", type=int, default=64)

    p = sub.add_parser("certify", parents=[common], help="invertibility certificate")
    p.add_argument("--mode", choices=("first", "quadratic"), default="first")
    p.add_argument("--targets", type=int, default=1000)
    p.add_argument("--pairs", type=int, default=4096)
    p.add_argument("--d-bar", type=_positive, default=1.0)
    p.add_argument("--a", type=float, default=0.0)
    p.add_argument("--tol-m", type=_positive, default=1e-6)
    p.add_argument("--audit-radius", type=_positive, default=0.1)

    p = sub.add_parser("invert", parents=[common], help="local preimages of a target")
    p.add_argument("--target", type=_vector)
    p.add_argument("--mode", choices=("auto", "regular", "quadratic"), default="auto")
    p.add_argument("--tol", type=_positive, default=1e-12)
    p.add_argument("--max-iter", type=int, default=100)

    p = sub.add_parser("sweep", parents=[common], help="largest scale passing the contraction test")
    p.add_argument("--s-min", type=_positive, default=0.01)
    p.add_argument("--s-max", type=_positive, default=1.0)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--pairs", type=int, default=4096)
    p.add_argument("--kappa", type=_positive, default=0.5)

    p = sub.add_parser("falsify", parents=[common], help="search for injectivity failures")
    p.add_argument("--radius", type=_positive, default=0.1)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--collision-tol", type=_positive, default=1e-6)
    return parser


def _config_argv(path: str, parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Translate a JSON config into trailing flags, so file values win."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}")
    if not isinstance(data, dict):
        raise UsageError("config must be a JSON object")
    sub = next(a for a in parser._subparsers._group_actions if a.dest == "command")
    command = next((a for a in argv if a in COMMANDS), None)
    known = {}
    for action in sub.choices[command]._actions:
        for opt in action.option_strings:
            if opt.startswith("--"):
                known[action.dest] = (opt, action)
    extra = []
    for key, value in data.items():
        dest = {"map": "map_path"}.get(key, key.replace("-", "_"))
        if dest not in known or dest == "config":
            raise UsageError(f"unknown config key {key!r}")
        opt, action = known[dest]
        if any(a == opt or a.startswith(opt + "=") for a in argv):
            log.warning("config file overrides %s given on the command line", opt)
        if action.nargs == 0:
            if not isinstance(value, bool):
                raise UsageError(f"config key {key!r} must be a boolean")
            if value:
                extra.append(opt)
            continue
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        extra += [opt, str(value)]
    return extra


def _ladder(args) -> DeltaLadder:
    try:
        return DeltaLadder(args.delta0, args.ratio, args.levels)
    except ValueError as exc:
        raise UsageError(str(exc))


def _cmd_expand(f, x, args) -> tuple[str, int, dict]:
    ladder = _ladder(args)
    if args.fit:
        exp = fit_expansion(f, x, args.order, ladder, n_directions=args.directions, seed=args.seed)
    else:
        exp = exact_expansion(f, x, args.order)
    slope = remainder_slope(f, exp, ladder, n_directions=args.directions, seed=args.seed)
    outcome = "saturated" if slope.saturated else "slope"
    return outcome, 0, {"expansion": exp.to_dict(), "remainder": slope.to_dict()}


def _cmd_certify(f, x, args) -> tuple[str, int, dict]:
    if args.mode == "first":
        cert = certify_first_order(
            f, x, FirstOrderOptions(pairs_per_radius=args.pairs, n_targets=args.targets, seed=args.seed)
        )
    else:
        opts = QuadraticOptions(
            tol_m=args.tol_m,
            d_bar=args.d_bar,
            a=args.a,
            n_targets=args.targets,
            ladder=_ladder(args),
            audit_radius=args.audit_radius,
            seed=args.seed,
        )
        cert = certify_quadratic(f, x, opts)
    body = cert.to_dict()
    results = {"certificate": body}
    if "remainder" in body:
        results["remainder"] = body["remainder"]
    return cert.status, 0 if cert.certified else 1, results


def _cmd_invert(f, x, args) -> tuple[str, int, dict]:
    if args.target is None:
        raise UsageError("invert needs --target")
    y = np.asarray(args.target, dtype=float)
    if y.shape[0] != x.shape[0]:
        raise UsageError("target dimension does not match the map")
    L = exact_expansion(f, x, 1).linear
    smin = float(np.linalg.svd(L, compute_uv=False)[-1])
    mode = args.mode
    if mode == "auto":
        mode = "regular" if smin > 1e-10 else "quadratic"
    results: dict = {"mode": mode}
    if mode == "regular":
        if smin <= 1e-10:
            return "refused", 1, {**results, "reason": "L singular"}
        sol = invert_regular(f, L, x, y, tol=args.tol, max_iter=args.max_iter)
    else:
        cert = certify_quadratic(f, x, QuadraticOptions(seed=args.seed, ladder=_ladder(args)))
        results["certificate"] = cert.to_dict()
        if not cert.certified:
            return "refused", 1, results
        sol = invert_degenerate(f, x, cert, y, tol=args.tol, max_iter=args.max_iter, seed=args.seed)
    results["solution"] = sol.to_dict()
    return sol.status, 0 if sol.converged else 1, results


def _cmd_sweep(f, x, args) -> tuple[str, int, dict]:
    if args.count < 4 or args.s_min >= args.s_max:
        raise UsageError("sweep needs --count >= 4 and --s-min < --s-max")
    L = exact_expansion(f, x, 1).linear
    if np.linalg.svd(L, compute_uv=False)[-1] <= 1e-10:
        return "refused", 1, {"reason": "L singular", "sweep": None}
    inv_norm = float(np.linalg.norm(np.linalg.inv(L), 2))
    scales = np.geomspace(args.s_min, args.s_max, args.count)
    table = uniform_diff_modulus(f, x, L, scales[::-1], args.pairs, seed=args.seed)
    omega = {row.radius: row.omega for row in table}
    result = scale_sweep(lambda s: (omega[s] * inv_norm <= args.kappa, omega[s] * inv_norm), scales)
    return (
        "passing_scale" if result.found else "no_passing_scale",
        0 if result.found else 1,
        {"sweep": result.to_dict(), "modulus": [[r.radius, r.omega, r.pairs] for r in table]},
    )


def _cmd_falsify(f, x, args) -> tuple[str, int, dict]:
    if args.samples < 1000:
        raise UsageError("falsify needs --samples >= 1000")
    audit = falsify_injectivity(f, x, args.radius, args.samples, args.collision_tol, seed=args.seed)
    outcome, code = ("clean", 0) if audit.clean else ("collision", 1)
    return outcome, code, {"injectivity": audit.to_dict()}


HANDLERS = {
    "expand": _cmd_expand,
    "certify": _cmd_certify,
    "invert": _cmd_invert,
    "sweep": _cmd_sweep,
    "falsify": _cmd_falsify,
}


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING))
    try:
        if args.config:
            extra = _config_argv(args.config, parser, argv)
            try:
                args = parser.parse_args(argv + extra)
            except SystemExit:
                raise UsageError("config file holds invalid values")
        if args.csv and not args.series:
            raise UsageError("--csv needs a non-empty --series")
        if args.series is not None and args.series not in SERIES:
            raise UsageError(f"unknown or empty --series {args.series!r}")
        if not args.map_path:
            raise UsageError("--map is required")
        try:
            f = load_map(args.map_path)
        except OSError as exc:
            raise UsageError(f"cannot read map file: {exc}")
        except MapSyntaxError as exc:
            raise UsageError(f"{args.map_path}: {exc}")
        point = args.point if args.point is not None else [0.0] * f.dim
        if len(point) != f.dim:
            raise UsageError(f"point has {len(point)} entries, map dimension is {f.dim}")
        x = np.asarray(point, dtype=float)

        start = time.perf_counter()
        outcome, code, results = HANDLERS[args.command](f, x, args)
        elapsed = time.perf_counter() - start
    except UsageError as exc:
        print(f"magnify: error: {exc}", file=sys.stderr)
        return 2

    config = {
        k: v for k, v in sorted(vars(args).items()) if k not in ("out", "csv", "config", "log_level", "map_path")
    }
    config["map"] = args.map_path
    config["point"] = [float(v) for v in x]
    results = {"outcome": outcome, "exit_code": code, **results}
    report = build_report(args.command, config, results, None if args.normalize else {"total_s": elapsed})
    text = dumps(report)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.csv:
        try:
            emit_csv(report, args.series, args.csv)
        except ValueError as exc:
            print(f"magnify: error: {exc}", file=sys.stderr)
            return 2
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
