"""Reproduction harness: rate studies, the distortion limit theorem,
discrepancy/distortion equivalence and recovery-error tracking."""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gamma as gamma_fn

import mslab
from mslab.discrepancy import gram_system, solve_with_ridge_escalation, wce_squared
from mslab.manifold import (
    Manifold,
    PointSet,
    RandomSource,
    fibonacci_sphere,
    from_name,
    quadrature_rule,
    sample_uniform,
    torus_grid,
    unit_ball_volume,
)
from mslab.metrics import (
    INF,
    covering_radius,
    distortion,
    distortion_functional,
    distortion_integral,
    mesh_resolution,
    quality_params,
)
from mslab.recovery import MLSConfig, build_partition, build_recovery, recovery_error


@dataclass
class ExperimentConfig:
    name: str
    manifold: str = "S2"
    n_list: tuple = (64, 128, 256, 512, 1024, 2048, 4096, 8192)
    gamma: float = 2.0
    alpha: float = 1.0
    trials: int = 50
    seed: int = 0
    resolution: int | None = None
    output_dir: str = "out"
    family: str = "random"
    families: tuple = ("random", "fibonacci", "cluster+cover")
    log_correction: bool = False
    nodes_per_point: float = 16.0
    tol: float = 1e-6
    workers: int = 1
    # recovery studies
    s: float = 2.0
    p: float = 2.0
    q: float = 1.0
    function: str = "smooth"
    degree: int | None = None
    delta: float | None = None
    eval_resolution: int = 64

    def __post_init__(self):
        self.n_list = tuple(int(n) for n in self.n_list)
        self.families = tuple(self.families)
        if not self.n_list:
            raise ValueError("n_list is empty")
        if any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
            raise ValueError("n_list must be strictly increasing")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")

    @property
    def m(self) -> Manifold:
        return from_name(self.manifold)

    def digest(self) -> str:
        """Hash of every field that influences numeric output."""
        d = asdict(self)
        for key in ("output_dir", "workers"):
            d.pop(key)
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    log_correction: bool
    ci_low: float = math.nan
    ci_high: float = math.nan


@dataclass
class Report:
    name: str
    columns: list
    rows: list
    config: ExperimentConfig
    summary: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)
    plot: dict = field(default_factory=dict)


def fit_rate(n, values, log_correction: bool = False) -> RateFit:
    """Least-squares line through (log x, log values), x = n or n / log n."""
    n = np.asarray(n, dtype=float)
    x = np.log(n / np.log(n)) if log_correction else np.log(n)
    y = np.log(np.asarray(values, dtype=float))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), min(1.0, max(0.0, r2)), log_correction)


def bootstrap_ci(n_list, per_n, rng: RandomSource, log_correction: bool = False, reps: int = 10):
    """Slope range over ``reps`` trial resamples (with replacement)."""
    gen = rng.generator()
    slopes = []
    for _ in range(reps):
        means = [float(np.mean(v[gen.integers(0, len(v), len(v))])) for v in per_n]
        slopes.append(fit_rate(n_list, means, log_correction).slope)
    return float(min(slopes)), float(max(slopes))


def limit_constant(m: Manifold, gamma: float) -> float:
    """n^{gamma/d} int dist^gamma dvol -> omega_d^{-gamma/d} Gamma(1+gamma/d) int h^{-gamma/d} dvol.

    For i.i.d. uniform points h = 1/vol(M), so the integral is vol^{1+gamma/d}.
    """
    d = m.dim
    return unit_ball_volume(d) ** (-gamma / d) * gamma_fn(1.0 + gamma / d) * m.total_volume ** (1.0 + gamma / d)


def _map(fn, items, workers: int):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


# --------------------------------------------------------------- families

def make_family(family: str, m: Manifold, n: int, rng: RandomSource) -> PointSet:
    if family == "random":
        return sample_uniform(m, n, rng, label="random")
    if family == "fibonacci":
        if not (m.is_sphere and m.dim == 2):
            raise ValueError("the Fibonacci family lives on S2")
        return fibonacci_sphere(n)
    if family == "grid":
        if m.is_sphere:
            raise ValueError("the grid family lives on a torus")
        k = round(n ** (1.0 / m.dim))
        if k**m.dim != n:
            raise ValueError(f"grid family needs n to be a perfect {m.dim}-th power, got {n}")
        return torus_grid(k, m.dim)
    if family == "cluster+cover":
        return cluster_cover(n, rng)
    raise ValueError(f"unknown point family {family!r}")


def cluster_cover(n: int, rng: RandomSource, cap_radius: float = 0.2) -> PointSet:
    """Half the points uniform in a small polar cap, the rest a Fibonacci lattice."""
    k = n // 2
    gen = rng.generator()
    # uniform in the cap {z >= cos(cap_radius)}
    z = 1.0 - gen.random(k) * (1.0 - math.cos(cap_radius))
    phi = 2.0 * math.pi * gen.random(k)
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    cluster = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    cover = fibonacci_sphere(n - k).points
    pts = np.vstack([cluster, cover])
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return PointSet(fibonacci_sphere(1).manifold, pts, "cluster+cover")


def builtin_function(name: str, m: Manifold):
    """Builtin smooth test functions, vectorized over point rows."""
    if m.is_sphere:
        table = {
            "x3": lambda x: x[:, -1],
            "smooth": lambda x: np.exp(x[:, 0]) * np.cos(2.0 * x[:, 1]) + x[:, -1] ** 2,
            "one": lambda x: np.ones(x.shape[0]),
        }
    else:
        table = {
            "smooth": lambda x: np.sin(2.0 * math.pi * x[:, 0]) * np.cos(2.0 * math.pi * x[:, -1]),
            "one": lambda x: np.ones(x.shape[0]),
        }
    if name not in table:
        raise ValueError(f"unknown function {name!r} on {m.name}; choose from {sorted(table)}")
    return table[name]


# ------------------------------------------------------------ experiments

def run_limit_theorem(cfg: ExperimentConfig) -> Report:
    """Monte Carlo mean of Z_n = n^{gamma/d} int dist(., P_n)^gamma dvol vs. its limit."""
    if cfg.gamma == INF:
        raise ValueError("the limit theorem needs a finite gamma")
    m = cfg.m
    z = limit_constant(m, cfg.gamma)
    root = RandomSource(cfg.seed)
    rows = []
    for ni, n in enumerate(cfg.n_list):
        res = cfg.resolution or mesh_resolution(m, n, cfg.nodes_per_point)
        rule = quadrature_rule(m, res)

        def trial(i, n=n, ni=ni, rule=rule):
            P = sample_uniform(m, n, root.child(ni, i))
            return n ** (cfg.gamma / m.dim) * distortion_integral(m, P, cfg.gamma, rule)

        zs = np.array(_map(trial, range(cfg.trials), cfg.workers))
        se = float(zs.std(ddof=1) / math.sqrt(cfg.trials)) if cfg.trials > 1 else math.nan
        rows.append((
            m.name, n, float(zs.mean()), se, z, float(zs.mean() / z - 1.0),
            float(np.mean(np.abs(zs - z))), float(np.mean((zs - z) ** 2)),
        ))
    cols = ["manifold", "n", "mean_Z", "std_err", "limit", "rel_dev", "L1_dev", "L2_dev"]
    rep = Report("limit-theorem", cols, rows, cfg)
    rep.summary = {"limit": z, "max_abs_rel_dev": max(abs(r[5]) for r in rows)}
    rep.plot = {"x": "n", "ys": ["mean_Z", "limit"], "loglog": False}
    return rep


def run_rates(cfg: ExperimentConfig) -> Report:
    """E ||dist(., P_n)||^alpha_{L_gamma} over trials and its log-log slope."""
    m = cfg.m
    root = RandomSource(cfg.seed)
    rows, per_n = [], []
    for ni, n in enumerate(cfg.n_list):
        if cfg.family == "random":
            rule = None
            if cfg.gamma != INF:
                rule = quadrature_rule(m, cfg.resolution or mesh_resolution(m, n, cfg.nodes_per_point))

            def trial(i, n=n, ni=ni, rule=rule):
                P = sample_uniform(m, n, root.child(ni, i))
                return distortion_functional(m, P, cfg.gamma, cfg.alpha, rule, tol=cfg.tol)

            vals = np.array(_map(trial, range(cfg.trials), cfg.workers))
        else:
            P = make_family(cfg.family, m, n, root.child(ni))
            if cfg.gamma == INF:
                v = covering_radius(m, P, tol=cfg.tol).value ** cfg.alpha
            else:
                # align the grid rule with the family's cells: 16 nodes per point and axis
                res = cfg.resolution or (16 * round(n ** (1.0 / m.dim)) if cfg.family == "grid"
                                         else mesh_resolution(m, n, cfg.nodes_per_point))
                rule = quadrature_rule(m, res)
                v = distortion(m, P, cfg.gamma, rule, error_control=False).value ** cfg.alpha
            vals = np.array([v])
        per_n.append(vals)
        se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
        rows.append((cfg.family, n, cfg.gamma, cfg.alpha, float(vals.mean()), se))
    fit = fit_rate(cfg.n_list, [r[4] for r in rows], cfg.log_correction)
    if cfg.family == "random" and cfg.trials > 1:
        fit.ci_low, fit.ci_high = bootstrap_ci(
            cfg.n_list, per_n, root.child(10**6), cfg.log_correction
        )
    cols = ["family", "n", "gamma", "alpha", "mean", "std_err"]
    rep = Report("rates", cols, rows, cfg, fits={"moment": fit})
    rep.summary = {"slope": fit.slope, "r_squared": fit.r_squared,
                   "ci_low": fit.ci_low, "ci_high": fit.ci_high}
    rep.plot = {"x": "n", "ys": ["mean"], "loglog": True}
    return rep


def run_equivalence(cfg: ExperimentConfig) -> Report:
    """Optimal-weight cap discrepancy vs. ||dist||_{L_{d+1}}^{(d+1)/2} per family."""
    m = cfg.m
    if not (m.is_sphere and m.dim == 2):
        raise ValueError("the equivalence study runs on S2")
    d = m.dim
    root = RandomSource(cfg.seed)
    rows = []
    for fi, fam in enumerate(cfg.families):
        for ni, n in enumerate(cfg.n_list):
            P = make_family(fam, m, n, root.child(fi, ni))
            sys = gram_system(P)
            _, min_wce = solve_with_ridge_escalation(sys)
            wce_eq = math.sqrt(max(0.0, wce_squared(sys, np.full(n, 1.0 / n))))
            rule = quadrature_rule(m, cfg.resolution or mesh_resolution(m, n, cfg.nodes_per_point))
            est = distortion(m, P, d + 1.0, rule, normalized=True)
            dist_pow = est.value ** ((d + 1) / 2.0)
            err = dist_pow * (d + 1) / 2.0 * est.error / est.value
            rows.append((fam, n, wce_eq, min_wce, dist_pow, min_wce / dist_pow, err))
    cols = ["label", "n", "wce_equal", "wce_opt", "dist_pow", "ratio", "err"]
    rep = Report("equivalence", cols, rows, cfg)
    spreads = {}
    for n in cfg.n_list:
        ratios = [r[5] for r in rows if r[1] == n]
        spreads[n] = max(ratios) / min(ratios)
    rep.summary = {"spread_by_n": spreads, "max_spread": max(spreads.values())}
    for fam in cfg.families:
        sub = [r for r in rows if r[0] == fam]
        ns = [r[1] for r in sub]
        rep.fits[f"{fam}:wce_opt"] = fit_rate(ns, [r[3] for r in sub])
        rep.fits[f"{fam}:dist_pow"] = fit_rate(ns, [r[4] for r in sub])
    rep.plot = {"x": "n", "ys": ["wce_opt", "dist_pow"], "loglog": True, "group": "label"}
    return rep


def run_recovery_rates(cfg: ExperimentConfig) -> Report:
    """L_q recovery error vs. ||dist||_{L_gamma}^alpha for random and Fibonacci points."""
    m = cfg.m
    params = quality_params(cfg.s, cfg.p, cfg.q, m.dim)
    mls = MLSConfig(degree=cfg.degree) if cfg.degree is not None else MLSConfig.for_smoothness(cfg.s)
    pou = build_partition(m, cfg.delta)
    f = builtin_function(cfg.function, m)
    rule = quadrature_rule(m, cfg.eval_resolution)
    root = RandomSource(cfg.seed)
    rows = []
    for fi, fam in enumerate(cfg.families):
        for ni, n in enumerate(cfg.n_list):
            P = make_family(fam, m, n, root.child(fi, ni))
            op = build_recovery(P, pou, mls)
            err = recovery_error(op, f, rule, cfg.q)
            drule = None
            if params.gamma != INF:
                drule = quadrature_rule(m, mesh_resolution(m, n, cfg.nodes_per_point))
            func = distortion_functional(m, P, params.gamma, params.alpha, drule, tol=cfg.tol)
            rows.append((fam, n, cfg.q, err, func, err / func))
    cols = ["label", "n", "q", "error", "dist_norm_gamma_alpha", "ratio"]
    rep = Report("recovery", cols, rows, cfg)
    le = np.log([r[3] for r in rows])
    lf = np.log([r[4] for r in rows])
    corr = float(np.corrcoef(le, lf)[0, 1]) if len(rows) > 2 else math.nan
    rep.summary = {"gamma": params.gamma, "alpha": params.alpha, "log_correlation": corr}
    for fam in cfg.families:
        sub = [r for r in rows if r[0] == fam]
        ns = [r[1] for r in sub]
        rep.fits[f"{fam}:error"] = fit_rate(ns, [r[3] for r in sub])
        rep.fits[f"{fam}:error_nlogn"] = fit_rate(ns, [r[3] for r in sub], log_correction=True)
    rep.plot = {"x": "n", "ys": ["error", "dist_norm_gamma_alpha"], "loglog": True, "group": "label"}
    return rep


RUNNERS = {
    "limit-theorem": run_limit_theorem,
    "rates": run_rates,
    "equivalence": run_equivalence,
    "recovery": run_recovery_rates,
}


# ------------------------------------------------------------------ output

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def csv_text(report: Report, extra_meta: dict | None = None) -> str:
    """CSV with a ``# key=value`` metadata line and a header line."""
    cfg = report.config
    meta = {
        "experiment": report.name,
        "seed": cfg.seed,
        "config_hash": cfg.digest(),
        "version": mslab.__version__,
    }
    meta.update(extra_meta or {})
    lines = ["# " + " ".join(f"{k}={_fmt(v)}" for k, v in meta.items())]
    lines.append(",".join(report.columns))
    lines += [",".join(_fmt(v) for v in row) for row in report.rows]
    return "\n".join(lines) + "\n"


def read_csv(path):
    """Parse a CSV written by :func:`emit` into (meta, columns, rows of strings)."""
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or not text[0].startswith("# "):
        raise ValueError(f"{path}: missing metadata line")
    meta = dict(tok.split("=", 1) for tok in text[0][2:].split())
    cols = text[1].split(",")
    rows = [line.split(",") for line in text[2:] if line]
    for row in rows:
        if len(row) != len(cols):
            raise ValueError(f"{path}: row has {len(row)} fields, header has {len(cols)}")
    return meta, cols, rows


def plot_csv(csv_path, svg_path, layout: dict) -> None:
    """Render a plot from the CSV alone."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed element ids keep the SVG byte-stable across runs
    matplotlib.rcParams["svg.hashsalt"] = "mslab"
    meta, cols, rows = read_csv(csv_path)
    xi = cols.index(layout["x"])
    gi = cols.index(layout["group"]) if layout.get("group") in cols else None
    groups = sorted({r[gi] for r in rows}) if gi is not None else [None]
    fig, ax = plt.subplots(figsize=(5, 4))
    for g in groups:
        sub = [r for r in rows if gi is None or r[gi] == g]
        x = [float(r[xi]) for r in sub]
        for y in layout["ys"]:
            yi = cols.index(y)
            label = y if g is None else f"{g}: {y}"
            ax.plot(x, [float(r[yi]) for r in sub], marker="o", label=label)
    if layout.get("loglog"):
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(layout["x"])
    ax.set_title(meta.get("experiment", ""))
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit(report: Report, output_dir, plot: bool = True) -> list:
    """Write ``<name>.csv`` (and ``<name>.svg``) into ``output_dir``."""
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{report.name}.csv"
        with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(csv_text(report))
    except OSError as exc:
        raise OSError(f"cannot write results to {out}: {exc}") from exc
    paths = [csv_path]
    if plot and report.plot:
        svg = out / f"{report.name}.svg"
        plot_csv(csv_path, svg, report.plot)
        paths.append(svg)
    return paths
