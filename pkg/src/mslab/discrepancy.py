"""Weighted spherical cap L2-discrepancy and optimal-weight cubature on S^d.

The cap kernel

    K(x, y) = int_{-1}^{1} sigma_d(C(x, t) ∩ C(y, t)) dt

reproduces a Sobolev space of smoothness (d+1)/2, and the worst-case
integration error of the rule sum_j w_j f(x_j) in that space equals the
weighted cap discrepancy D_2. All measures here are normalized (sigma_d).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import betainc

from mslab import kernels
from mslab.errors import NumericalError
from mslab.manifold import PointSet, QuadratureRule, RandomSource, quadrature_rule
from mslab.metrics import distortion, mesh_resolution

WCE_CLAMP = 1e-12


@dataclass
class WeightedPointSet:
    base: PointSet
    weights: np.ndarray

    def __post_init__(self):
        if not self.base.manifold.is_sphere:
            raise ValueError("cap discrepancy is defined on spheres only")
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.base.n,):
            raise ValueError(f"need {self.base.n} weights, got shape {self.weights.shape}")

    @classmethod
    def equal(cls, P: PointSet) -> "WeightedPointSet":
        return cls(P, np.full(P.n, 1.0 / P.n))

    @property
    def d(self) -> int:
        return self.base.manifold.dim


@dataclass(frozen=True)
class CapKernelValue:
    value: float
    method: str
    std_error: float = 0.0


@dataclass
class GramSystem:
    """Kernel matrix, representer values and initial error of the integral."""

    points: PointSet
    gram: np.ndarray
    rhs: np.ndarray
    kk: float
    ridge: float

    @property
    def n(self) -> int:
        return self.rhs.size


def cap_measure(d: int, t):
    """Normalized surface measure of the cap {y : x.y >= t} on S^d."""
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) > 1.0):
        raise ValueError("cap height must lie in [-1, 1]")
    if d == 2:
        out = 0.5 * (1.0 - t)
    elif d == 1:
        out = np.arccos(t) / math.pi
    else:
        out = betainc(0.5 * d, 0.5 * d, 0.5 * (1.0 - t))
    return float(out) if out.ndim == 0 else out


def _uniform_sphere(gen: np.random.Generator, n: int, d: int) -> np.ndarray:
    z = gen.standard_normal((n, d + 1))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def cap_kernel(d: int, x, y, method: str = "analytic", samples: int = 10**6,
               rng: RandomSource | None = None) -> CapKernelValue:
    """Cap kernel value K(x, y).

    ``analytic`` integrates the two-cap lens measure over t (d = 1, 2);
    ``monte-carlo`` samples (z, t) from the defining double integral.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if method == "analytic":
        phi = 2.0 * math.asin(min(1.0, 0.5 * float(np.linalg.norm(x - y))))
        return CapKernelValue(float(kernels.cap_kernel_angle(d, np.array([phi]))[0]), "analytic")
    if method != "monte-carlo":
        raise ValueError(f"unknown method {method!r}")
    gen = (rng or RandomSource(0)).generator()
    hits = 0.0
    sq = 0.0
    done = 0
    while done < samples:
        m = min(2**18, samples - done)
        z = _uniform_sphere(gen, m, d)
        t = gen.uniform(-1.0, 1.0, m)
        v = 2.0 * ((z @ x >= t) & (z @ y >= t))
        hits += v.sum()
        sq += np.dot(v, v)
        done += m
    mean = hits / samples
    var = max(0.0, sq / samples - mean * mean)
    return CapKernelValue(mean, "monte-carlo", math.sqrt(var / samples))


def kernel_mean(d: int) -> float:
    """h(x) = int K(x, y) dsigma(y) = int_{-1}^{1} sigma_d(C(., t))^2 dt.

    The value is independent of x; by Fubini it also equals the double
    integral of K.
    """
    if d == 2:
        return 2.0 / 3.0
    return quad(lambda t: cap_measure(d, t) ** 2, -1.0, 1.0, epsabs=1e-14, epsrel=1e-13)[0]


def kernel_mean_mc(d: int, x, samples: int, rng: RandomSource):
    """Monte Carlo estimate of int K(x, y) dsigma(y) from the definition."""
    gen = rng.generator()
    x = np.asarray(x, dtype=float)
    z = _uniform_sphere(gen, samples, d)
    y = _uniform_sphere(gen, samples, d)
    t = gen.uniform(-1.0, 1.0, samples)
    v = 2.0 * ((z @ x >= t) & (np.einsum("ij,ij->i", z, y) >= t))
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(samples))


def gram_system(P: PointSet, ridge: float | None = None) -> GramSystem:
    """Assemble G_ij = K(x_i, x_j), b_i = h(x_i) and ||h||^2."""
    m = P.manifold
    if not m.is_sphere or m.dim not in (1, 2):
        raise ValueError("Gram assembly needs points on S^1 or S^2")
    gram = kernels.cap_gram(P.points, m.dim)
    h = kernel_mean(m.dim)
    if ridge is None:
        ridge = 1e-12 * float(np.trace(gram)) / P.n
    return GramSystem(P, gram, np.full(P.n, h), h, float(ridge))


def wce_squared(sys: GramSystem, w) -> float:
    """Squared worst-case error kk - 2 w.b + w.G.w of the rule with weights w."""
    w = np.asarray(w, dtype=float)
    if w.shape != sys.rhs.shape:
        raise ValueError(f"weights have shape {w.shape}, system has {sys.n} points")
    val = sys.kk - 2.0 * float(w @ sys.rhs) + float(w @ sys.gram @ w)
    if val < 0.0 and val >= -WCE_CLAMP:
        return 0.0
    return val


def d2_direct(wps: WeightedPointSet, mc_samples: int, rng: RandomSource, batches: int = 20):
    """Monte Carlo evaluation of the weighted cap L2-discrepancy.

    Samples (x, t) uniformly from S^d x [-1, 1]; batch ``b`` uses substream
    ``rng.child(b)``. Returns ``(D2, std_error)``, the error from batch means
    propagated through the square root.
    """
    if mc_samples < 1000:
        raise ValueError("need at least 1000 Monte Carlo samples")
    d = wps.d
    pts = wps.base.points
    per = -(-mc_samples // batches)
    means = np.empty(batches)
    for b in range(batches):
        gen = rng.child(b).generator()
        acc = 0.0
        done = 0
        while done < per:
            m = min(per - done, max(1, 2**22 // max(1, pts.shape[0])))
            x = _uniform_sphere(gen, m, d)
            t = gen.uniform(-1.0, 1.0, m)
            inside = (x @ pts.T) >= t[:, None]
            resid = inside @ wps.weights - cap_measure(d, t)
            acc += float(np.dot(resid, resid))
            done += m
        means[b] = 2.0 * acc / per
    sq = float(means.mean())
    sq_err = float(means.std(ddof=1) / math.sqrt(batches))
    val = math.sqrt(max(sq, 0.0))
    return val, (sq_err / (2.0 * val) if val > 0 else math.sqrt(sq_err))


def optimal_weights(sys: GramSystem):
    """Minimize the worst-case error over weights: solve (G + ridge I) w = b.

    Returns ``(w, min_wce)`` with ``min_wce = sqrt(max(0, kk - b.w))``.
    Raises :class:`NumericalError` if the Cholesky factorization fails.
    """
    a = sys.gram + sys.ridge * np.eye(sys.n)
    try:
        fac = cho_factor(a, lower=True, check_finite=True)
    except LinAlgError as exc:
        cond = np.linalg.cond(a)
        raise NumericalError(
            f"Cholesky failed for n={sys.n}, ridge={sys.ridge:.3e}, cond={cond:.3e}; "
            "increase the ridge"
        ) from exc
    w = cho_solve(fac, sys.rhs)
    return w, math.sqrt(max(0.0, sys.kk - float(sys.rhs @ w)))


def solve_with_ridge_escalation(sys: GramSystem, max_tries: int = 8):
    """Retry :func:`optimal_weights` with a tenfold larger ridge on failure."""
    for _ in range(max_tries):
        try:
            return optimal_weights(sys)
        except NumericalError:
            sys.ridge = max(sys.ridge * 10.0, 1e-14)
    return optimal_weights(sys)


def equivalence_ratio(P: PointSet, rule: QuadratureRule | None = None,
                      sys: GramSystem | None = None) -> float:
    """min-wce / ||dist(., P)||_{L_{d+1}(sigma_d)}^{(d+1)/2}.

    Both sides use the normalized measure.
    """
    d = P.manifold.dim
    if sys is None:
        sys = gram_system(P)
    _, min_wce = solve_with_ridge_escalation(sys)
    if rule is None:
        rule = quadrature_rule(P.manifold, mesh_resolution(P.manifold, P.n))
    dist = distortion(P.manifold, P, d + 1.0, rule, normalized=True, error_control=False).value
    return min_wce / dist ** ((d + 1) / 2.0)
