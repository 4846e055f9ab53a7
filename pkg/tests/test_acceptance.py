"""The eight acceptance criteria, one test each, at their stated tolerances.

Each test records a one-line PASS/FAIL verdict that is printed in the
terminal summary, then asserts it.
"""
import math
import time

import numpy as np

from mslab.discrepancy import (
    WeightedPointSet,
    d2_direct,
    gram_system,
    kernel_mean,
    optimal_weights,
    wce_squared,
)
from mslab.experiments import (
    ExperimentConfig,
    csv_text,
    run_equivalence,
    run_limit_theorem,
    run_rates,
    run_recovery_rates,
)
from mslab.manifold import (
    PointSet,
    RandomSource,
    ball_volume,
    exp_map,
    fibonacci_sphere,
    geodesic_distance,
    log_map,
    quadrature_rule,
    sample_uniform,
    sphere,
    torus,
    torus_grid,
    wrap_torus,
)
from mslab.metrics import INF, covering_radius, distances_to_set, distortion
from mslab.recovery import (
    MLSConfig,
    PartitionOfUnity,
    build_partition,
    build_recovery,
    fooling_function,
    recover,
)

import _runs
from conftest import ACCEPTANCE, brute_sphere_mesh
from oracles import grid_distortion


def verdict(key, checks):
    ok = all(c for c, _ in checks)
    ACCEPTANCE[key] = (ok, "; ".join(d for _, d in checks))
    assert ok, ACCEPTANCE[key][1]


def test_criterion_1_limit_theorem_constant():
    checks = []
    for name, z in (("S2", 16 * math.pi), ("T2", 1 / math.pi)):
        t0 = time.perf_counter()
        rep = _runs.limit_theorem(name)
        elapsed = time.perf_counter() - t0
        row = rep.rows[-1]
        assert row[1] == 4096
        dev = abs(row[2] / z - 1)
        checks.append((dev <= 0.10, f"{name} mean={row[2]:.5g} vs {z:.5g} (dev {dev:.2%})"))
        checks.append((elapsed <= 300, f"{name} {elapsed:.0f}s"))
    verdict(1, checks)


def test_criterion_2_random_point_rates():
    t0 = time.perf_counter()
    dist = _runs.random_rates(2.0)
    cover = _runs.random_rates(INF)
    elapsed = time.perf_counter() - t0
    s1, s2 = dist.summary["slope"], cover.summary["slope"]
    verdict(2, [
        (abs(s1 + 0.5) <= 0.05, f"distortion slope {s1:.4f}"),
        (abs(s2 + 0.5) <= 0.07, f"covering radius slope vs n/log n {s2:.4f}"),
        (elapsed <= 600, f"{elapsed:.0f}s"),
    ])


def test_criterion_3_optimal_rate_on_torus_grids():
    checks = []
    t2 = torus(2)
    for gamma in (1.0, 2.0, INF):
        slope = _runs.grid_rates(gamma).summary["slope"]
        checks.append((abs(slope + 0.5) <= 0.02, f"gamma={gamma:g} slope {slope:.4f}"))
    worst = 0.0
    for gamma in (1.0, 2.0):
        for k in (4, 8, 16, 32):
            est = distortion(t2, torus_grid(k), gamma, quadrature_rule(t2, 16 * k)).value
            worst = max(worst, abs(est / grid_distortion(k, gamma) - 1))
    checks.append((worst <= 0.01, f"cell-oracle max rel dev {worst:.2e}"))
    verdict(3, checks)


def test_criterion_4_discrepancy_identity():
    s2 = sphere(2)
    root = RandomSource(404)
    worst = 0.0
    for i in range(20):
        src = root.child(i)
        P = sample_uniform(s2, 20, src.child(0))
        w = src.child(1).generator().uniform(0.0, 0.1, 20)
        kernel_form = math.sqrt(wce_squared(gram_system(P), w))
        val, se = d2_direct(WeightedPointSet(P, w), 200000, src.child(2))
        worst = max(worst, abs(kernel_form - val) / se)
    one = gram_system(PointSet(s2, [[0, 0, 1.0]]), ridge=0.0)
    w1, mw = optimal_weights(one)
    pins = [abs(one.kk - 2 / 3), abs(kernel_mean(2) - 2 / 3), abs(w1[0] - 2 / 3), abs(mw**2 - 2 / 9)]
    verdict(4, [
        (worst < 3.0, f"max |kernel - MC| = {worst:.2f} std errors over 20 sets"),
        (max(pins) <= 1e-6, f"analytic pins max error {max(pins):.1e}"),
    ])


def test_criterion_5_equivalence():
    rep = _runs.equivalence()
    spread = rep.summary["max_spread"]
    wce_slope = rep.fits["fibonacci:wce_opt"].slope
    dist_slope = rep.fits["fibonacci:dist_pow"].slope
    verdict(5, [
        (spread <= 10, f"ratio spread {spread:.3f}"),
        (abs(wce_slope + 0.75) <= 0.1, f"Fibonacci min-wce slope {wce_slope:.4f}"),
        (abs(dist_slope + 0.75) <= 0.1, f"Fibonacci distortion^(3/2) slope {dist_slope:.4f}"),
    ])


def test_criterion_6_recovery_operator():
    s2, t2 = sphere(2), torus(2)
    # linearity
    op = build_recovery(fibonacci_sphere(2000), build_partition(s2), MLSConfig(degree=2))
    gen = np.random.default_rng(6)
    f, g = gen.normal(size=(2, 2000))
    nodes = sample_uniform(s2, 100, RandomSource(6)).points
    lin = np.abs(recover(op, 3 * f - 2 * g, nodes) - 3 * recover(op, f, nodes) + 2 * recover(op, g, nodes)).max()
    # polynomial reproduction on a single-chart region of T^2
    s, delta = 0.025, 0.0206
    c = (np.arange(40) + 0.5) * s
    X, Y = np.meshgrid(c, c, indexing="ij")
    pou = PartitionOfUnity(t2, np.column_stack([X.ravel(), Y.ravel()]), delta)
    p = pou.centers[820]
    g1 = (np.arange(31) - 15) * 0.0004
    GX, GY = np.meshgrid(g1, g1, indexing="ij")
    P = PointSet(t2, wrap_torus(np.column_stack([GX.ravel(), GY.ravel()]) + p))
    top = build_recovery(P, pou, MLSConfig(degree=2))
    r = np.sqrt(gen.uniform(0, 0.002**2, 200))
    a = gen.uniform(0, 2 * np.pi, 200)
    ev = p + np.column_stack([r * np.cos(a), r * np.sin(a)])
    poly = lambda y: 1.0 - 3.0 * y[:, 0] + 4.0 * y[:, 1] ** 2 - 2.0 * y[:, 0] * y[:, 1]
    rep_err = np.abs(recover(top, poly(P.points - p), ev) - poly(ev - p)).max()
    # fooling function
    Pf = sample_uniform(s2, 500, RandomSource(7))
    fool = fooling_function(s2, Pf, 2.0)
    mesh_vals = fool(sample_uniform(s2, 10**5, RandomSource(8)).points)
    on_p = np.abs(fool(Pf.points)).max()
    # error tracks the distortion functional
    corr = _runs.recovery(1.0).summary["log_correlation"]
    verdict(6, [
        (lin <= 1e-12, f"linearity {lin:.1e}"),
        (rep_err <= 1e-9, f"T2 polynomial reproduction {rep_err:.1e}"),
        (on_p == 0.0 and mesh_vals.min() >= 0.0, f"fooling on P {on_p:g}, mesh min {mesh_vals.min():g}"),
        (corr >= 0.95, f"log correlation {corr:.4f}"),
    ])


def test_criterion_7_geometry_oracles():
    s2 = sphere(2)
    src = RandomSource(77)
    worst = 0.0
    for m in (s2, torus(2)):
        a = sample_uniform(m, 200, src.child(m.dim, int(m.is_sphere), 0)).points
        b = sample_uniform(m, 200, src.child(m.dim, int(m.is_sphere), 1)).points
        keep = geodesic_distance(m, a, b) < 0.9 * m.injectivity_radius
        for x, y in zip(a[keep], b[keep]):
            back = exp_map(m, x, log_map(m, x, y))
            if not m.is_sphere:
                back = back - np.round(back - y)
            worst = max(worst, float(np.abs(back - y).max()))
    e = np.eye(3)
    octa = PointSet(s2, np.vstack([e, -e]))
    exact = math.acos(1 / math.sqrt(3))
    cr = covering_radius(s2, octa, tol=1e-6).value
    brute = distances_to_set(s2, brute_sphere_mesh(708, 1416), octa).max()
    vol = ball_volume(s2, np.array([0, 0, 1.0]), 1e-3) / (math.pi * 1e-6)
    verdict(7, [
        (worst <= 1e-9, f"exp/log round trip {worst:.1e}"),
        (abs(cr - exact) <= 1e-6 and brute <= cr + 2e-6, f"octahedron {cr:.9f} (mesh brute force {brute:.6f})"),
        (abs(vol - 1) <= 1e-3, f"ball volume ratio at r=1e-3: {vol:.9f}"),
    ])


def test_criterion_8_determinism():
    small = {
        "limit-theorem": (run_limit_theorem, dict(manifold="S2", n_list=(64, 128), trials=8)),
        "rates": (run_rates, dict(manifold="S2", n_list=(64, 128, 256), gamma=INF, trials=6)),
        "equivalence": (run_equivalence, dict(n_list=(32, 64))),
        "recovery": (run_recovery_rates, dict(n_list=(1500, 3000), families=("random", "fibonacci"),
                                              eval_resolution=24)),
    }
    same = []
    for name, (fn, kw) in small.items():
        texts = {csv_text(fn(ExperimentConfig(name, seed=8, workers=w, **kw))) for w in (1, 1, 3)}
        same.append((len(texts) == 1, f"{name} {'identical' if len(texts) == 1 else 'DIFFERS'}"))
    verdict(8, same)
