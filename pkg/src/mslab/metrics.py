"""Distance-to-set functionals: covering radius and L_gamma distortion."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from mslab.manifold import (
    Manifold,
    PointSet,
    QuadratureRule,
    RandomSource,
    chord_to_geodesic,
    exp_map,
    geodesic_distance,
    quadrature_rule,
    sample_uniform,
    wrap_torus,
)

INF = math.inf


def parse_gamma(text) -> float:
    """Parse an exponent that may be ``inf``."""
    if isinstance(text, (int, float)):
        g = float(text)
    elif str(text).strip().lower() in ("inf", "infinity", "∞"):
        g = INF
    else:
        g = float(text)
    if not g > 0:
        raise ValueError(f"gamma must be positive, got {text!r}")
    return g


@dataclass(frozen=True)
class QualityParams:
    s: float
    p: float
    q: float
    d: int
    gamma: float
    alpha: float


def quality_params(s: float, p: float, q: float, d: int) -> QualityParams:
    """Exponents (gamma, alpha) for L_q recovery on H^s_p of a d-manifold.

    For q < p the error is governed by the L_gamma distortion with
    gamma = s / (1/q - 1/p) and power alpha = s; for q >= p by the covering
    radius (gamma = inf) with alpha = s - d (1/p - 1/q).
    """
    if not 1.0 < p < INF:
        raise ValueError("p must lie in (1, inf)")
    if not 1.0 <= q <= INF:
        raise ValueError("q must lie in [1, inf]")
    if d < 1:
        raise ValueError("d must be a positive integer")
    if not s > d / p:
        raise ValueError(f"need s > d/p = {d / p:g} for the embedding into C(M)")
    inv_q = 0.0 if q == INF else 1.0 / q
    if q < p:
        return QualityParams(s, p, q, d, s / (inv_q - 1.0 / p), s)
    return QualityParams(s, p, q, d, INF, s - d * (1.0 / p - inv_q))


def integration_params(s: float, p: float, d: int) -> QualityParams:
    """Integration behaves like L_1 recovery: gamma = s p*, alpha = s."""
    return quality_params(s, p, 1.0, d)


@dataclass(frozen=True)
class DistortionEstimate:
    value: float
    gamma: float
    method: str
    error: float
    node_count: int
    normalized: bool = False


class NearestPoints:
    """Exact nearest-neighbour queries in geodesic distance.

    Sphere queries run a k-d tree on the embedding (chordal distance is
    monotone in the geodesic one); torus queries use a periodic k-d tree.
    """

    def __init__(self, P: PointSet):
        self.manifold = P.manifold
        self.points = P.points
        if P.manifold.is_sphere:
            self.tree = cKDTree(P.points)
        else:
            self.tree = cKDTree(P.points, boxsize=1.0)

    def query(self, x, k: int = 1):
        x = np.asarray(x, dtype=float)
        k = min(k, self.points.shape[0])
        chord, idx = self.tree.query(x, k=k)
        return chord_to_geodesic(self.manifold, chord), idx


def distances_to_set(m: Manifold, x, P: PointSet) -> np.ndarray:
    """dist(x_i, P) for a batch of points ``x``."""
    x = m.validate(x)
    return NearestPoints(P).query(x)[0]


def distance_to_set(m: Manifold, x, P: PointSet) -> float:
    if P.n < 1:
        raise ValueError("point set is empty")
    x = m.validate(x)
    return float(np.min(geodesic_distance(m, P.points, np.broadcast_to(x, P.points.shape))))


def mesh_resolution(m: Manifold, n: int, nodes_per_point: float = 16.0, minimum: int = 16) -> int:
    """Quadrature resolution giving roughly ``nodes_per_point * n`` nodes."""
    target = nodes_per_point * n
    if m.is_sphere and m.dim == 2:
        res = math.ceil(math.sqrt(target / 2.0))
    else:
        res = math.ceil(target ** (1.0 / m.dim))
    return max(minimum, res)


# ---------------------------------------------------------- covering radius

def _equidistant_center(m: Manifold, y: np.ndarray, pts: np.ndarray):
    """Point near ``y`` equidistant from the d+1 points ``pts``, or None."""
    if m.is_sphere:
        rows = pts[1:] - pts[0]
        _, sv, vt = np.linalg.svd(rows)
        if sv.size < m.dim or sv[-1] < 1e-12 * max(sv[0], 1e-300):
            return None
        c = vt[-1]
        if np.dot(c, y) < 0:
            c = -c
        return c / np.linalg.norm(c)
    diff = pts - y
    diff -= np.round(diff)
    q = y + diff
    a = 2.0 * (q[1:] - q[0])
    b = np.sum(q[1:] ** 2, axis=1) - np.sum(q[0] ** 2)
    if abs(np.linalg.det(a)) < 1e-14:
        return None
    c = np.linalg.solve(a, b)
    if np.linalg.norm(c - y) > 0.5:
        return None
    return wrap_torus(c)


def _local_refine(m: Manifold, nearest: NearestPoints, start: np.ndarray, value: float,
                  step: float, tol: float, max_iter: int = 400):
    """Grid pattern search for a local maximum of dist(., P) around ``start``.

    A 5^d stencil of tangent offsets is laid around the current best point.
    An improving stencil point becomes the new centre; the step is halved
    unless that point sat on the stencil edge. Returns
    (point, value, last_improvement).
    """
    offs = np.arange(-2, 3, dtype=float)
    grid = np.stack(np.meshgrid(*([offs] * m.dim), indexing="ij"), axis=-1).reshape(-1, m.dim)
    on_edge = np.max(np.abs(grid), axis=1) == 2
    best, best_val = start, value
    delta = 0.0
    limit = 0.45 * m.injectivity_radius
    for _ in range(max_iter):
        keep = np.linalg.norm(grid * step, axis=1) < limit
        cand = exp_map(m, best, (grid * step)[keep])
        vals = nearest.query(cand)[0]
        i = int(np.argmax(vals))
        delta = max(0.0, float(vals[i]) - best_val)
        if delta > 0.0:
            best, best_val = cand[i], float(vals[i])
            if on_edge[keep][i]:
                continue
        if step < tol and delta < tol:
            break
        step *= 0.5
    return best, best_val, delta


def covering_radius(m: Manifold, P: PointSet, tol: float = 1e-6, top_k: int = 16,
                    resolution: int | None = None) -> DistortionEstimate:
    """Covering radius sup_x dist(x, P) by coarse mesh plus local refinement.

    The coarse mesh is scanned, the ``top_k`` largest distinct holes (holes
    are told apart by their set of d+1 nearest sample points) are snapped to
    the equidistant point of those neighbours and then refined by a local
    pattern search down to step ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if resolution is None:
        resolution = mesh_resolution(m, P.n, nodes_per_point=4.0)
    rule = quadrature_rule(m, resolution)
    nodes = rule.nodes
    nearest = NearestPoints(P)
    k = min(m.dim + 1, P.n)
    dist, idx = nearest.query(nodes, k=k)
    dist = dist.reshape(nodes.shape[0], -1)
    idx = idx.reshape(nodes.shape[0], -1)
    values = dist[:, 0]
    order = np.argsort(-values, kind="stable")
    spacing = math.pi / resolution if m.is_sphere else 1.0 / resolution

    seen = set()
    starts = []
    for i in order:
        key = tuple(sorted(idx[i].tolist()))
        if key in seen:
            continue
        seen.add(key)
        starts.append(i)
        if len(starts) >= top_k:
            break

    best_val, best_delta = -1.0, 0.0
    for i in starts:
        y, val = nodes[i], float(values[i])
        if P.n >= m.dim + 1:
            c = _equidistant_center(m, y, P.points[idx[i]])
            if c is not None:
                cval = float(nearest.query(c[None, :])[0][0])
                if cval > val:
                    y, val = c, cval
        _, rval, delta = _local_refine(m, nearest, y, val, spacing, tol)
        if rval > best_val:
            best_val, best_delta = rval, delta
    return DistortionEstimate(best_val, INF, "mesh-max", float(best_delta), len(rule))


# --------------------------------------------------------------- distortion

def distortion_integral(m: Manifold, P: PointSet, gamma: float, rule: QuadratureRule) -> float:
    """Quadrature value of the un-rooted integral of dist(., P)^gamma over vol_M."""
    if not 0 < gamma < INF:
        raise ValueError("gamma must be finite and positive; use covering_radius for gamma = inf")
    if rule.manifold != m:
        raise ValueError("quadrature rule lives on a different manifold")
    d = distances_to_set(m, rule.nodes, P)
    return float(np.dot(rule.weights, d**gamma))


def distortion(m: Manifold, P: PointSet, gamma: float, rule: QuadratureRule | None = None,
               normalized: bool = False, error_control: bool = True) -> DistortionEstimate:
    """L_gamma norm of dist(., P), by default over the unnormalized volume.

    With ``error_control`` the reported error is the change against a rule
    of doubled resolution.
    """
    gamma = float(gamma)
    if gamma == INF:
        raise ValueError("gamma = inf is the covering radius; call covering_radius")
    if rule is None:
        rule = quadrature_rule(m, mesh_resolution(m, P.n))
    scale = 1.0 / m.total_volume if normalized else 1.0

    def value(r):
        return (scale * distortion_integral(m, P, gamma, r)) ** (1.0 / gamma)

    v = value(rule)
    err = abs(value(rule.refined()) - v) if error_control else 0.0
    return DistortionEstimate(v, gamma, "quadrature", err, len(rule), normalized)


def distortion_functional(m: Manifold, P: PointSet, gamma: float, alpha: float,
                          rule: QuadratureRule | None = None, normalized: bool = False,
                          tol: float = 1e-6) -> float:
    """||dist(., P)||_{L_gamma}^alpha, dispatching gamma = inf to the covering radius."""
    if gamma == INF:
        return covering_radius(m, P, tol=tol).value ** alpha
    return distortion(m, P, gamma, rule, normalized=normalized, error_control=False).value ** alpha


def moment_over_trials(m: Manifold, n: int, gamma: float, alpha: float, trials: int,
                       rng: RandomSource, rule: QuadratureRule | None = None,
                       normalized: bool = False, tol: float = 1e-6, workers: int = 1):
    """Mean and standard error of ||dist(., X_1..X_n)||^alpha over i.i.d. trials.

    Trial ``i`` draws from substream ``rng.child(i)``, so results do not
    depend on ``workers``. Returns ``(mean, std_error, values)``.
    """
    if trials < 2:
        raise ValueError("need at least two trials for a standard error")
    if gamma != INF and rule is None:
        rule = quadrature_rule(m, mesh_resolution(m, n))

    def one(i):
        P = sample_uniform(m, n, rng.child(i))
        return distortion_functional(m, P, gamma, alpha, rule, normalized, tol)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = np.array(list(pool.map(one, range(trials))))
    else:
        values = np.array([one(i) for i in range(trials)])
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(trials)), values
