import math

import numpy as np
import pytest

from mslab import kernels
from mslab.discrepancy import (
    GramSystem,
    WeightedPointSet,
    cap_kernel,
    cap_measure,
    d2_direct,
    equivalence_ratio,
    gram_system,
    kernel_mean,
    kernel_mean_mc,
    optimal_weights,
    solve_with_ridge_escalation,
    wce_squared,
)
from mslab.errors import NumericalError
from mslab.manifold import PointSet, RandomSource, fibonacci_sphere, random_rotation, sample_uniform, sphere
from mslab._fallback import lens_measure
from oracles import lens_area_mc, stolarsky_kernel


def test_cap_measure_examples():
    for d in (1, 2, 3):
        assert cap_measure(d, -1.0) == pytest.approx(1.0)
        assert cap_measure(d, 1.0) == pytest.approx(0.0)
        assert cap_measure(d, 0.0) == pytest.approx(0.5)
    assert cap_measure(2, 0.3) == pytest.approx(0.35)
    with pytest.raises(ValueError):
        cap_measure(2, 1.5)


def test_lens_measure_against_monte_carlo():
    gen = np.random.default_rng(0)
    x = np.array([0, 0, 1.0])
    for phi, t in [(0.3, 0.2), (1.2, -0.4), (2.5, 0.05), (0.01, 0.9), (3.1, -0.95)]:
        y = np.array([math.sin(phi), 0, math.cos(phi)])
        mc = lens_area_mc(x, y, t, 400000, gen)
        assert float(lens_measure(2, np.array([t]), phi)[0]) == pytest.approx(mc, abs=4e-3)


def test_cap_kernel_examples():
    x = np.array([0, 0, 1.0])
    assert cap_kernel(2, x, x).value == pytest.approx(1.0, abs=1e-14)
    anti = cap_kernel(2, x, -x).value
    assert anti == pytest.approx(0.5, abs=1e-13)  # regression pin, see the MC test below
    y = np.array([0.6, 0.0, 0.8])
    assert cap_kernel(2, x, y).value == pytest.approx(cap_kernel(2, y, x).value, abs=1e-14)
    assert cap_kernel(2, x, y).value <= cap_kernel(2, x, x).value


def test_antipodal_kernel_monte_carlo_pin():
    x = np.array([0, 0, 1.0])
    mc = cap_kernel(2, x, -x, method="monte-carlo", samples=10**7, rng=RandomSource(5))
    assert abs(mc.value - cap_kernel(2, x, -x).value) < 3 * mc.std_error + 1e-12


def test_analytic_kernel_matches_closed_form_and_mc():
    gen = np.random.default_rng(3)
    P = sample_uniform(sphere(2), 40, RandomSource(7)).points
    for a, b in zip(P[:20], P[20:]):
        assert cap_kernel(2, a, b).value == pytest.approx(float(stolarsky_kernel(a, b)), abs=1e-13)
    a, b = P[0], P[1]
    mc = cap_kernel(2, a, b, method="monte-carlo", samples=2 * 10**6, rng=RandomSource(8))
    assert abs(mc.value - cap_kernel(2, a, b).value) < 3 * mc.std_error


def test_circle_kernel_against_monte_carlo():
    x = np.array([1.0, 0.0])
    for ang in (0.4, 2.0, math.pi):
        y = np.array([math.cos(ang), math.sin(ang)])
        mc = cap_kernel(1, x, y, method="monte-carlo", samples=10**6, rng=RandomSource(9))
        assert abs(mc.value - cap_kernel(1, x, y).value) < 3.5 * mc.std_error


def test_kernel_mean_and_kk():
    assert kernel_mean(2) == pytest.approx(2 / 3, abs=1e-15)
    # general-d quadrature agrees with the closed form on S^2 when routed through betainc
    from scipy.integrate import quad

    assert quad(lambda t: cap_measure(2, t) ** 2, -1, 1)[0] == pytest.approx(2 / 3, abs=1e-12)
    xs = sample_uniform(sphere(2), 2, RandomSource(1)).points
    a = kernel_mean_mc(2, xs[0], 10**6, RandomSource(2))
    b = kernel_mean_mc(2, xs[1], 10**6, RandomSource(3))
    assert abs(a[0] - b[0]) < 3 * math.hypot(a[1], b[1])
    assert abs(a[0] - 2 / 3) < 3 * a[1]
    assert gram_system(fibonacci_sphere(3)).kk == pytest.approx(2 / 3)


def test_single_point_values():
    sys_ = gram_system(PointSet(sphere(2), [[0, 0, 1.0]]), ridge=0.0)
    assert wce_squared(sys_, [1.0]) == pytest.approx(1 / 3, abs=1e-14)
    assert wce_squared(sys_, [0.0]) == pytest.approx(2 / 3, abs=1e-15)
    w, min_wce = optimal_weights(sys_)
    assert w[0] == pytest.approx(2 / 3, abs=1e-12)
    assert min_wce**2 == pytest.approx(2 / 9, abs=1e-12)
    with pytest.raises(ValueError):
        wce_squared(sys_, [1.0, 2.0])


def test_d2_direct_examples():
    P = WeightedPointSet(PointSet(sphere(2), [[0, 0, 1.0]]), [1.0])
    val, se = d2_direct(P, 400000, RandomSource(4))
    assert abs(val - 1 / math.sqrt(3)) < 3 * se
    Z = WeightedPointSet(fibonacci_sphere(5), np.zeros(5))
    val, se = d2_direct(Z, 200000, RandomSource(5))
    assert abs(val - math.sqrt(2 / 3)) < 3 * se + 1e-12
    with pytest.raises(ValueError):
        d2_direct(Z, 10, RandomSource(5))


def test_direct_definition_is_quadratic_in_weights():
    # a zero-sum perturbation v around equal weights: D2(w0 + a v)^2 is a quadratic in a
    P = fibonacci_sphere(12)
    w0 = np.full(12, 1 / 12)
    v = np.tile([1.0, -1.0], 6) * 0.01
    vals = [d2_direct(WeightedPointSet(P, w0 + a * v), 20000, RandomSource(6))[0] ** 2 for a in (0, 1, 2, 3)]
    # common random numbers make the third finite difference of a quadratic vanish exactly
    assert abs(vals[3] - 3 * vals[2] + 3 * vals[1] - vals[0]) < 1e-12
    sys_ = gram_system(P)
    kern = [wce_squared(sys_, w0 + a * v) for a in (0, 1, 2)]
    assert (kern[2] - 2 * kern[1] + kern[0]) == pytest.approx(2 * v @ sys_.gram @ v, rel=1e-8)


def test_kernel_form_equals_direct_definition():
    root = RandomSource(2024)
    for i in range(5):
        src = root.child(i)
        P = sample_uniform(sphere(2), 20, src.child(0))
        w = src.child(1).generator().uniform(0.0, 0.1, 20)
        sys_ = gram_system(P)
        kernel_form = math.sqrt(wce_squared(sys_, w))
        val, se = d2_direct(WeightedPointSet(P, w), 200000, src.child(2))
        assert abs(kernel_form - val) < 3 * se


def test_gram_is_positive_semidefinite_and_symmetric():
    P = sample_uniform(sphere(2), 60, RandomSource(1))
    sys_ = gram_system(P)
    assert np.array_equal(sys_.gram, sys_.gram.T)
    gen = np.random.default_rng(0)
    for _ in range(100):
        w = gen.normal(size=60)
        assert w @ sys_.gram @ w >= -1e-10
        assert wce_squared(sys_, w) >= -1e-12


def test_rotation_invariance():
    P = sample_uniform(sphere(2), 30, RandomSource(2))
    R = random_rotation(np.random.default_rng(1), 3)
    Q = P.with_points(P.points @ R.T)
    w = np.linspace(0.01, 0.05, 30)
    assert wce_squared(gram_system(P), w) == pytest.approx(wce_squared(gram_system(Q), w), abs=1e-10)


def test_optimal_weights_properties():
    P = sample_uniform(sphere(2), 80, RandomSource(3))
    sys_ = gram_system(P)
    w, min_wce = optimal_weights(sys_)
    resid = (sys_.gram + sys_.ridge * np.eye(80)) @ w - sys_.rhs
    assert np.abs(resid).max() <= 1e-10 * np.abs(sys_.rhs).max()
    assert min_wce <= math.sqrt(wce_squared(sys_, np.full(80, 1 / 80)))
    assert min_wce == pytest.approx(math.sqrt(wce_squared(sys_, w)), abs=1e-7)


def test_antipodal_pair_gets_equal_weights():
    w, _ = optimal_weights(gram_system(PointSet(sphere(2), [[0, 0, 1.0], [0, 0, -1.0]])))
    assert w[0] == pytest.approx(w[1], abs=1e-14)


def test_min_wce_nonincreasing_when_adding_points():
    P = sample_uniform(sphere(2), 40, RandomSource(4))
    prev = math.inf
    for k in range(30, 41):
        _, mw = optimal_weights(gram_system(P.with_points(P.points[:k])))
        assert mw <= prev + 1e-10
        prev = mw


def test_factorization_failure_reports_condition():
    P = PointSet(sphere(2), [[0, 0, 1.0], [0, 0, 1.0]])
    sys_ = gram_system(P, ridge=0.0)
    sys_.gram = sys_.gram - 1e-3 * np.eye(2)  # indefinite
    with pytest.raises(NumericalError, match="cond"):
        optimal_weights(sys_)


def test_ridge_escalation_recovers_duplicate_points():
    P = PointSet(sphere(2), [[0, 0, 1.0], [0, 0, 1.0], [1.0, 0, 0]])
    sys_ = gram_system(P, ridge=0.0)
    w, mw = solve_with_ridge_escalation(sys_)
    assert np.isfinite(w).all() and mw > 0


def test_equivalence_ratio_examples():
    rs = [equivalence_ratio(fibonacci_sphere(n)) for n in (64, 256)]
    assert all(r > 0 for r in rs)
    assert max(rs) / min(rs) <= 2


def test_weighted_point_set_validation():
    with pytest.raises(ValueError):
        WeightedPointSet(fibonacci_sphere(3), [1.0, 2.0])
    from mslab.manifold import torus_grid

    with pytest.raises(ValueError):
        WeightedPointSet(torus_grid(2), np.ones(4))
    assert np.allclose(WeightedPointSet.equal(fibonacci_sphere(4)).weights, 0.25)


@pytest.mark.parametrize("name", ["python", "compiled"])
def test_backends_agree_on_gram(name):
    pytest.importorskip("mslab._core") if name == "compiled" else None
    P = sample_uniform(sphere(2), 50, RandomSource(5)).points
    g = kernels.backend(name).cap_gram(P, 2)
    assert np.allclose(g, stolarsky_kernel(P[:, None, :], P[None, :, :]), atol=1e-13)
