"""Command line entry point ``mslab``.

Exit status is 0 on success, 2 for invalid input (bad flags, unreadable or
malformed files, out-of-range parameters) and 3 for numerical failure.
"""
from __future__ import annotations

import argparse
import math
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError

import mslab
from mslab.discrepancy import (
    WeightedPointSet,
    d2_direct,
    equivalence_ratio,
    gram_system,
    solve_with_ridge_escalation,
    wce_squared,
)
from mslab.errors import NumericalError
from mslab.experiments import (
    RUNNERS,
    ExperimentConfig,
    Report,
    csv_text,
    emit,
    make_family,
    builtin_function,
)
from mslab.manifold import RandomSource, from_name, quadrature_rule, read_points, write_points
from mslab.metrics import (
    INF,
    covering_radius,
    distortion,
    distortion_functional,
    mesh_resolution,
    parse_gamma,
    quality_params,
)
from mslab.recovery import MLSConfig, build_recovery, recovery_error

EXIT_INVALID = 2
EXIT_NUMERICAL = 3


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def read_config(path) -> dict:
    """Parse a ``key=value`` file; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (t.strip() for t in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(name: str, value):
    """Convert config-file text to the type of the ExperimentConfig field."""
    if not isinstance(value, str):
        return value
    if name in ("n_list",):
        return tuple(int(v) for v in value.replace(",", " ").split())
    if name == "families":
        return tuple(v for v in value.replace(",", " ").split())
    if name in ("gamma", "q"):
        return parse_gamma(value)
    if name in ("trials", "seed", "workers", "eval_resolution"):
        return int(value)
    if name in ("resolution", "degree"):
        return None if value.lower() == "none" else int(value)
    if name == "delta":
        return None if value.lower() == "none" else float(value)
    if name == "log_correction":
        return value.lower() in ("1", "true", "yes", "on")
    if name in ("alpha", "tol", "s", "p", "nodes_per_point"):
        return float(value)
    return value


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.replace(",", " ").split())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a list of integers: {text!r}") from exc


def _gamma(text: str) -> float:
    try:
        return parse_gamma(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    common.add_argument("--out", default=None, help="output file or directory")
    common.add_argument("--config", default=None, help="key=value file with defaults")
    common.add_argument("--workers", type=int, default=None, help="threads for trial loops")

    parser = _Parser(prog="mslab", description="Point-set quality on spheres and tori.")
    parser.add_argument("--version", action="version", version=f"mslab {mslab.__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", parents=[common], help="generate a point file")
    p.add_argument("--manifold", default="S2")
    p.add_argument("--family", default="random", choices=["random", "fibonacci", "grid", "cluster+cover"])
    p.add_argument("--n", type=int, required=True)

    p = sub.add_parser("metrics", parents=[common], help="covering radius or L_gamma distortion")
    p.add_argument("--manifold", default=None, help="expected manifold of the point file")
    p.add_argument("--points", required=True)
    p.add_argument("--gamma", type=_gamma, default=INF)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--normalized", action="store_true", help="use the normalized volume")

    p = sub.add_parser("discrepancy", parents=[common], help="cap discrepancy of a point file")
    p.add_argument("--points", required=True)
    p.add_argument("--weights", default="equal", help="weight file or 'equal'")
    p.add_argument("--mc-samples", type=int, default=0)

    p = sub.add_parser("weights", parents=[common], help="optimal cap-discrepancy weights")
    p.add_argument("--points", required=True)

    p = sub.add_parser("recover", parents=[common], help="recovery error of a builtin function")
    p.add_argument("--points", required=True)
    p.add_argument("--function", default="smooth")
    p.add_argument("--degree", type=int, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--eval-resolution", type=int, default=64)
    p.add_argument("--q", type=_gamma, default=1.0)
    p.add_argument("--s", type=float, default=2.0)
    p.add_argument("--p", type=float, default=2.0)

    for name, hlp in (("rates", "random/grid rate study"),
                      ("limit-theorem", "distortion limit constant"),
                      ("equivalence", "discrepancy vs distortion"),
                      ("recovery", "recovery error vs distortion")):
        p = sub.add_parser(name, parents=[common], help=hlp)
        p.add_argument("--manifold", default=None)
        p.add_argument("--n-list", type=_int_list, default=None)
        p.add_argument("--gamma", type=_gamma, default=None)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--trials", type=int, default=None)
        p.add_argument("--resolution", type=int, default=None)
        p.add_argument("--family", default=None)
        p.add_argument("--families", type=lambda t: tuple(t.replace(",", " ").split()), default=None)
        p.add_argument("--log-correction", action="store_true", default=None)
        p.add_argument("--no-plot", action="store_true")
        if name == "recovery":
            p.add_argument("--q", type=_gamma, default=None)
            p.add_argument("--s", type=float, default=None)
            p.add_argument("--p", type=float, default=None)
            p.add_argument("--function", default=None)
            p.add_argument("--degree", type=int, default=None)
            p.add_argument("--delta", type=float, default=None)
            p.add_argument("--eval-resolution", type=int, default=None)
    return parser


# ------------------------------------------------------------- helpers

def _settings(args) -> dict:
    conf = read_config(args.config) if args.config else {}
    seed = args.seed if args.seed is not None else int(conf.get("seed", 0))
    workers = args.workers if args.workers is not None else int(conf.get("workers", 1))
    return {"conf": conf, "seed": seed, "workers": workers}


def _write(text: str, out, default_name: str) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    if path.is_dir() or str(out).endswith(("/", "\\")):
        path = path / default_name
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _single_row(name, columns, row, seed, meta) -> str:
    cfg = ExperimentConfig(name, n_list=(1,), trials=1, seed=seed)
    rep = Report(name, columns, [row], cfg)
    extra = {"config_hash": _hash_meta(meta)}
    return csv_text(rep, extra)


def _hash_meta(meta: dict) -> str:
    import hashlib
    import json

    return hashlib.sha256(json.dumps(meta, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _points(args, settings):
    P = read_points(args.points)
    expected = getattr(args, "manifold", None) or settings["conf"].get("manifold")
    if expected and from_name(expected) != P.manifold:
        raise UsageError(f"{args.points} holds {P.manifold.name} points, expected {expected}")
    return P


# ------------------------------------------------------------ commands

def cmd_gen(args, st):
    m = from_name(args.manifold)
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    P = make_family(args.family, m, args.n, RandomSource(st["seed"]))
    if args.out is None:
        tmp = [f"# manifold={m.name} n={P.n}"]
        tmp += [" ".join(f"{c:.17g}" for c in row) for row in P.points]
        sys.stdout.write("\n".join(tmp) + "\n")
    else:
        write_points(args.out, P)


def cmd_metrics(args, st):
    P = _points(args, st)
    m = P.manifold
    if args.gamma == INF:
        est = covering_radius(m, P, tol=args.tol, resolution=args.resolution)
    else:
        rule = quadrature_rule(m, args.resolution or mesh_resolution(m, P.n))
        est = distortion(m, P, args.gamma, rule, normalized=args.normalized)
    row = (P.label, P.n, est.gamma, est.value, est.error, est.method)
    meta = {"cmd": "metrics", "points": args.points, "gamma": args.gamma, "tol": args.tol,
            "resolution": args.resolution, "normalized": args.normalized}
    _write(_single_row("metrics", ["label", "n", "gamma", "value", "err", "method"], row, st["seed"], meta),
           args.out, "metrics.csv")


def _read_weights(path, n) -> np.ndarray:
    vals = [float(t) for line in Path(path).read_text(encoding="utf-8").splitlines()
            if line.strip() and not line.startswith("#") for t in line.split()]
    if len(vals) != n:
        raise UsageError(f"{path}: {len(vals)} weights for {n} points")
    return np.array(vals)


def cmd_discrepancy(args, st):
    P = _points(args, st)
    if not P.manifold.is_sphere or P.manifold.dim != 2:
        raise UsageError("cap discrepancy needs S2 points")
    w = np.full(P.n, 1.0 / P.n) if args.weights == "equal" else _read_weights(args.weights, P.n)
    sys_ = gram_system(P)
    wce = math.sqrt(max(0.0, wce_squared(sys_, w)))
    _, min_wce = solve_with_ridge_escalation(sys_)
    ratio = equivalence_ratio(P, sys=sys_)
    err = 0.0
    if args.mc_samples:
        _, err = d2_direct(WeightedPointSet(P, w), args.mc_samples, RandomSource(st["seed"]))
    meta = {"cmd": "discrepancy", "points": args.points, "weights": args.weights,
            "mc": args.mc_samples}
    row = (P.label, P.n, wce, min_wce, ratio, err)
    _write(_single_row("discrepancy", ["label", "n", "wce_equal", "wce_opt", "ratio", "err"], row,
                       st["seed"], meta), args.out, "discrepancy.csv")


def cmd_weights(args, st):
    P = _points(args, st)
    if not P.manifold.is_sphere or P.manifold.dim != 2:
        raise UsageError("optimal cap weights need S2 points")
    w, min_wce = solve_with_ridge_escalation(gram_system(P))
    lines = [f"{v:.17g}" for v in w] + [f"# min_wce={min_wce:.17g}"]
    _write("\n".join(lines) + "\n", args.out, "weights.txt")


def cmd_recover(args, st):
    P = _points(args, st)
    m = P.manifold
    params = quality_params(args.s, args.p, args.q, m.dim)
    mls = MLSConfig(degree=args.degree) if args.degree is not None else MLSConfig.for_smoothness(args.s)
    op = build_recovery(P, mls=mls, delta=args.delta)
    f = builtin_function(args.function, m)
    err = recovery_error(op, f, quadrature_rule(m, args.eval_resolution), args.q)
    rule = None if params.gamma == INF else quadrature_rule(m, mesh_resolution(m, P.n))
    func = distortion_functional(m, P, params.gamma, params.alpha, rule)
    meta = {"cmd": "recover", "points": args.points, "function": args.function, "degree": mls.degree,
            "delta": args.delta, "eval_resolution": args.eval_resolution, "q": args.q, "s": args.s,
            "p": args.p}
    row = (P.label, P.n, args.q, err, func, err / func)
    _write(_single_row("recover", ["label", "n", "q", "error", "dist_norm_gamma_alpha", "ratio"], row,
                       st["seed"], meta), args.out, "recover.csv")


def experiment_config(name: str, args, st) -> ExperimentConfig:
    """Defaults, then the config file, then explicit flags."""
    values = {}
    known = {f.name for f in fields(ExperimentConfig)}
    for key, val in st["conf"].items():
        if key not in known:
            raise UsageError(f"unknown config key {key!r}")
        values[key] = _coerce(key, val)
    for key in known:
        flag = getattr(args, key, None)
        if flag is not None and key not in ("name",):
            values[key] = flag
    values["seed"] = st["seed"]
    values["workers"] = st["workers"]
    values.pop("name", None)
    if name == "limit-theorem" and "trials" not in values:
        values["trials"] = 200
        values.setdefault("n_list", (256, 1024, 4096))
    if name == "equivalence":
        values.setdefault("n_list", (64, 256, 1024))
    if name == "recovery":
        values.setdefault("n_list", (4000, 8000, 16000, 32000, 64000))
        values.setdefault("families", ("random", "fibonacci"))
    if name == "rates" and values.get("family") == "grid":
        values.setdefault("n_list", (16, 64, 256, 1024, 4096))
        values.setdefault("trials", 1)
    return ExperimentConfig(name, **values)


def cmd_experiment(name, args, st):
    cfg = experiment_config(name, args, st)
    report = RUNNERS[name](cfg)
    out = args.out or cfg.output_dir
    paths = emit(report, out, plot=not args.no_plot)
    for key, val in report.summary.items():
        print(f"{key}: {val}")
    for key, fit in report.fits.items():
        print(f"fit {key}: slope={fit.slope:.4f} r2={fit.r_squared:.4f}"
              + ("" if math.isnan(fit.ci_low) else f" ci=[{fit.ci_low:.4f}, {fit.ci_high:.4f}]"))
    for p in paths:
        print(f"wrote {p}")


COMMANDS = {
    "gen": cmd_gen,
    "metrics": cmd_metrics,
    "discrepancy": cmd_discrepancy,
    "weights": cmd_weights,
    "recover": cmd_recover,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        st = _settings(args)
        if args.command in COMMANDS:
            COMMANDS[args.command](args, st)
        else:
            cmd_experiment(args.command, args, st)
    except (NumericalError, LinAlgError, FloatingPointError) as exc:
        print(f"mslab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError, KeyError) as exc:
        print(f"mslab: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return 0


if __name__ == "__main__":
    sys.exit(main())
