"""Chart-based moving-least-squares recovery and the matching cubature.

A partition of unity psi_j subordinate to small geodesic balls B_j is fixed.
For samples of f on P, each chart fits (psi_j f) o exp_j from the points
exp_j^{-1}(P ∩ B_j) by moving least squares and the chart pieces are summed.
The resulting operator is linear, f -> U f for a sparse matrix U, and the
cubature Q(f) = int A(f) has weights U^T w_rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np
import scipy.sparse as sp
from scipy.integrate import quad
from scipy.spatial import cKDTree
from scipy.special import sph_legendre_p_all

from mslab import kernels
from mslab.manifold import (
    Manifold,
    PointSet,
    QuadratureRule,
    geodesic_to_chord,
    log_map,
    quadrature_rule,
    tangent_frame,
)
from mslab.metrics import NearestPoints, distances_to_set


# ------------------------------------------------------------------ bumps

def bump(u):
    """C-infinity bump exp(-1/(1-u^2)) on |u| < 1, zero elsewhere."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
    return out


def wendland_weight(r):
    """Compactly supported C^2 profile (1 - r)^4_+ (4 r + 1)."""
    q = np.maximum(0.0, 1.0 - r)
    return q**4 * (4.0 * r + 1.0)


def _tree(m: Manifold, pts: np.ndarray) -> cKDTree:
    return cKDTree(pts) if m.is_sphere else cKDTree(pts, boxsize=1.0)


# ---------------------------------------------------------- partition of unity

@dataclass
class PartitionOfUnity:
    """Shepard-normalized bumps psi_j supported in B(p_j, delta)."""

    manifold: Manifold
    centers: np.ndarray
    delta: float
    frames: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        m = self.manifold
        if not 0.0 < self.delta < m.injectivity_radius / 24.0:
            raise ValueError(
                f"delta must lie in (0, inj/24) = (0, {m.injectivity_radius / 24.0:.6g})"
            )
        self.centers = m.validate(np.atleast_2d(self.centers))
        if not self.frames:
            self.frames = [tangent_frame(m, c) for c in self.centers]
        self._tree = _tree(m, self.centers)

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    def matrix(self, x: np.ndarray, normalize: bool = True) -> sp.csr_matrix:
        """Sparse (len(x), J) matrix of psi_j(x_i)."""
        m = self.manifold
        x = m.validate(np.atleast_2d(x))
        tree = _tree(m, x)
        pairs = tree.sparse_distance_matrix(
            self._tree, geodesic_to_chord(m, self.delta), output_type="ndarray"
        )
        rows = pairs["i"].astype(np.int64)
        cols = pairs["j"].astype(np.int64)
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        vals = bump(_pair_distance(m, x[rows], self.centers[cols]) / self.delta)
        mat = sp.csr_matrix((vals, (rows, cols)), shape=(x.shape[0], self.size))
        mat.eliminate_zeros()
        if not normalize:
            return mat
        sums = np.asarray(mat.sum(axis=1)).ravel()
        if np.any(sums <= 0.0):
            raise ValueError(f"{int(np.sum(sums <= 0))} points are not covered by any chart")
        return sp.diags(1.0 / sums) @ mat

    def __call__(self, x) -> np.ndarray:
        return self.matrix(x).toarray()


def _pair_distance(m: Manifold, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if m.is_sphere:
        chord = np.linalg.norm(a - b, axis=1)
        return 2.0 * np.arcsin(np.minimum(1.0, 0.5 * chord))
    diff = a - b
    diff -= np.round(diff)
    return np.linalg.norm(diff, axis=1)


def greedy_cover(m: Manifold, radius: float, mesh: np.ndarray) -> np.ndarray:
    """Farthest-point sampling of ``mesh`` until every node lies within ``radius``.

    Starts from mesh node 0; ties in the farthest distance go to the lowest
    node index.
    """
    tree = _tree(m, mesh)
    chosen = [0]
    mind = _pair_distance(m, mesh, np.broadcast_to(mesh[0], mesh.shape))
    current = float(mind.max())
    while current >= radius:
        i = int(np.argmax(mind))
        chosen.append(i)
        near = np.asarray(tree.query_ball_point(mesh[i], geodesic_to_chord(m, current)), dtype=np.int64)
        if near.size:
            dd = _pair_distance(m, mesh[near], np.broadcast_to(mesh[i], (near.size, mesh.shape[1])))
            mind[near] = np.minimum(mind[near], dd)
        mind[i] = 0.0
        current = float(mind.max())
    return mesh[np.array(chosen)]


def default_delta(m: Manifold) -> float:
    return m.injectivity_radius / 25.0


def build_partition(m: Manifold, delta: float | None = None, mesh_factor: float = 6.0) -> PartitionOfUnity:
    """Partition of unity with centres from a greedy delta/2-cover."""
    if delta is None:
        delta = default_delta(m)
    if not 0.0 < delta < m.injectivity_radius / 24.0:
        raise ValueError(f"delta must lie in (0, inj/24) = (0, {m.injectivity_radius / 24.0:.6g})")
    spacing = delta / mesh_factor
    if m.is_sphere:
        res = max(8, math.ceil(math.pi / spacing))
    else:
        res = max(8, math.ceil(1.0 / spacing))
    mesh = quadrature_rule(m, res).nodes
    # the mesh's own gap is at most ~spacing, so cover it slightly tighter
    centers = greedy_cover(m, 0.5 * delta - spacing, mesh)
    return PartitionOfUnity(m, centers, delta)


# -------------------------------------------------------------------- MLS

@dataclass(frozen=True)
class MLSConfig:
    degree: int = 1
    support_multiplier: float = 2.0
    min_points_factor: float = 1.5
    # zero-valued samples on and just outside the chart boundary: f_j = (psi_j f) o exp_j
    # vanishes off the chart ball, so these are exact data. Their spacing
    # follows the chart's mean data spacing times ghost_spacing.
    boundary_ghosts: bool = True
    ghost_spacing: float = 1.0
    ghost_rings: tuple = (1.0,)

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("degree must be non-negative")
        if self.support_multiplier < 1.5:
            raise ValueError("support multiplier must be at least 1.5")
        if self.min_points_factor < 1.0:
            raise ValueError("min_points_factor must be at least 1")

    @classmethod
    def for_smoothness(cls, s: float, **kw) -> "MLSConfig":
        return cls(degree=max(1, math.ceil(s) - 1), **kw)


def monomial_exponents(dim: int, degree: int):
    """Exponents of total degree <= ``degree`` ordered by degree, plus cumulative counts."""
    exps = [e for e in product(range(degree + 1), repeat=dim) if sum(e) <= degree]
    exps.sort(key=lambda e: (sum(e), tuple(-x for x in e)))
    counts = [sum(1 for e in exps if sum(e) <= k) for k in range(degree + 1)]
    return np.array(exps, dtype=np.int64).reshape(-1, dim), np.array(counts, dtype=np.int64)


def boundary_ghosts(dim: int, delta: float, cfg: MLSConfig, n_chart: int) -> np.ndarray:
    """Chart-coordinate positions of the zero-valued boundary samples."""
    if not cfg.boundary_ghosts:
        return np.empty((0, dim))
    if dim == 1:
        dirs = np.array([[-1.0], [1.0]])
    elif dim == 2:
        h = delta * math.sqrt(math.pi / max(n_chart, 1)) * cfg.ghost_spacing
        count = int(min(256, max(8, round(2.0 * math.pi * delta / h))))
        ang = 2.0 * math.pi * np.arange(count) / count
        dirs = np.column_stack([np.cos(ang), np.sin(ang)])
    else:
        eye = np.eye(dim)
        dirs = np.vstack([eye, -eye])
    return np.vstack([ring * delta * dirs for ring in cfg.ghost_rings])


def _mls_neighbourhoods(tree: cKDTree, evals: np.ndarray, k: int, multiplier: float):
    """CSR neighbour lists and support radii for MLS evaluation nodes."""
    npts = tree.n
    kk = min(k, npts)
    dk, _ = tree.query(evals, k=kk)
    dk = np.asarray(dk).reshape(evals.shape[0], -1)[:, -1]
    radius = multiplier * np.maximum(dk, 1e-12)
    lists = tree.query_ball_point(evals, radius, return_sorted=True)
    lengths = np.fromiter((len(l) for l in lists), dtype=np.int64, count=len(lists))
    indptr = np.concatenate([[0], np.cumsum(lengths)])
    indices = np.fromiter((i for l in lists for i in l), dtype=np.int64, count=int(indptr[-1]))
    return indptr, indices, radius


def mls_fit(chart_points, values, evals, cfg: MLSConfig, backend=None):
    """MLS approximation in R^d evaluated at ``evals`` (one node or a batch).

    Nodes without any data point in reach return ``nan`` (holes).
    """
    pts = np.atleast_2d(np.asarray(chart_points, dtype=float))
    values = np.asarray(values, dtype=float)
    single = np.ndim(evals) == 1
    z = np.atleast_2d(np.asarray(evals, dtype=float))
    if pts.shape[0] == 0:
        out = np.full(z.shape[0], np.nan)
        return float(out[0]) if single else out
    exps, counts = monomial_exponents(pts.shape[1], cfg.degree)
    k = math.ceil(cfg.min_points_factor * counts[-1])
    indptr, indices, radius = _mls_neighbourhoods(cKDTree(pts), z, k, cfg.support_multiplier)
    impl = backend or kernels
    coef, used = impl.mls_coefficients(pts, indptr, indices, z, radius, exps, counts)
    out = np.add.reduceat(coef * values[indices], indptr[:-1]) if indices.size else np.zeros(len(z))
    out = np.where(np.diff(indptr) > 0, out, 0.0)
    out[used < 0] = np.nan
    return float(out[0]) if single else out


# ------------------------------------------------------------ the operator

@dataclass
class RecoveryOperator:
    """Linear recovery A(f) = sum_j A_j(f) from samples of f on ``points``."""

    pou: PartitionOfUnity
    mls: MLSConfig
    points: PointSet
    chart_index: list = field(default_factory=list, repr=False)
    chart_coords: list = field(default_factory=list, repr=False)
    chart_psi: list = field(default_factory=list, repr=False)
    backend: object = None

    def __post_init__(self):
        m = self.pou.manifold
        if self.points.manifold != m:
            raise ValueError("point set and partition live on different manifolds")
        psi = self.pou.matrix(self.points.points).tocsc()
        self.chart_index, self.chart_coords, self.chart_psi = [], [], []
        for j in range(self.pou.size):
            lo, hi = psi.indptr[j], psi.indptr[j + 1]
            idx = psi.indices[lo:hi].astype(np.int64)
            order = np.argsort(idx, kind="stable")
            idx = idx[order]
            self.chart_index.append(idx)
            self.chart_psi.append(psi.data[lo:hi][order])
            if idx.size:
                y = log_map(m, self.pou.centers[j], self.points.points[idx], self.pou.frames[j])
            else:
                y = np.empty((0, m.dim))
            self.chart_coords.append(np.atleast_2d(y).reshape(-1, m.dim))
        self._cache = {}

    @property
    def manifold(self) -> Manifold:
        return self.pou.manifold

    def charts_containing(self, x) -> list:
        """Indices j with x in the open ball B(p_j, delta)."""
        m = self.manifold
        d = _pair_distance(m, self.pou.centers, np.broadcast_to(x, self.pou.centers.shape))
        return np.flatnonzero(d < self.pou.delta).tolist()

    def evaluation_matrix(self, nodes) -> sp.csr_matrix:
        """Sparse U with A(f)(nodes) = U @ f(points); cached per node array."""
        m = self.manifold
        nodes = m.validate(np.atleast_2d(nodes))
        key = (nodes.shape, hash(nodes.tobytes()))
        if key in self._cache:
            return self._cache[key]
        exps, counts = monomial_exponents(m.dim, self.mls.degree)
        k = math.ceil(self.mls.min_points_factor * counts[-1])
        node_tree = _tree(m, nodes)
        chord = geodesic_to_chord(m, self.pou.delta)

        pts_parts, ptr_parts, idx_parts, z_parts, r_parts = [], [], [], [], []
        rows_parts, owners = [], []
        pt_off = 0
        nnz = 0
        for j in range(self.pou.size):
            y = self.chart_coords[j]
            if y.shape[0] == 0:
                continue
            ev = np.asarray(node_tree.query_ball_point(self.pou.centers[j], chord), dtype=np.int64)
            if ev.size == 0:
                continue
            ev.sort()
            dz = _pair_distance(m, nodes[ev], np.broadcast_to(self.pou.centers[j], (ev.size, nodes.shape[1])))
            ev = ev[dz < self.pou.delta]
            if ev.size == 0:
                continue
            z = log_map(m, self.pou.centers[j], nodes[ev], self.pou.frames[j]).reshape(-1, m.dim)
            y = np.vstack([y, boundary_ghosts(m.dim, self.pou.delta, self.mls, y.shape[0])])
            indptr, indices, radius = _mls_neighbourhoods(cKDTree(y), z, k, self.mls.support_multiplier)
            pts_parts.append(y)
            ptr_parts.append(indptr[1:] + nnz)
            idx_parts.append(indices + pt_off)
            z_parts.append(z)
            r_parts.append(radius)
            rows_parts.append(ev)
            owners.append((j, indices, indptr))
            pt_off += y.shape[0]
            nnz += int(indptr[-1])

        if not pts_parts:
            mat = sp.csr_matrix((nodes.shape[0], self.points.n))
            self._cache[key] = mat
            return mat
        impl = self.backend or kernels
        indptr = np.concatenate([[0]] + ptr_parts)
        coef, used = impl.mls_coefficients(
            np.vstack(pts_parts), indptr, np.concatenate(idx_parts), np.vstack(z_parts),
            np.concatenate(r_parts), exps, counts,
        )
        # coefficient of sample i in chart j is u * psi_j(x_i)
        rows, cols, vals = [], [], []
        start = 0
        for (j, local_idx, local_ptr), ev in zip(owners, rows_parts):
            seg = coef[start:start + local_idx.size]
            start += local_idx.size
            row = np.repeat(ev, np.diff(local_ptr))
            real = local_idx < self.chart_index[j].size
            rows.append(row[real])
            cols.append(self.chart_index[j][local_idx[real]])
            vals.append(seg[real] * self.chart_psi[j][local_idx[real]])
        mat = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(nodes.shape[0], self.points.n),
        ).tocsr()
        mat.sum_duplicates()
        self.last_degrees = used
        self._cache[key] = mat
        return mat


def build_recovery(P: PointSet, pou: PartitionOfUnity | None = None,
                   mls: MLSConfig | None = None, delta: float | None = None,
                   backend=None) -> RecoveryOperator:
    if pou is None:
        pou = build_partition(P.manifold, delta)
    return RecoveryOperator(pou, mls or MLSConfig(), P, backend=backend)


def recover(op: RecoveryOperator, samples, eval_nodes) -> np.ndarray:
    """Values of A(f) at ``eval_nodes`` from ``samples`` = f(points)."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape != (op.points.n,):
        raise ValueError(f"expected {op.points.n} samples, got shape {samples.shape}")
    return op.evaluation_matrix(eval_nodes) @ samples


def cubature_weights(op: RecoveryOperator, rule: QuadratureRule) -> np.ndarray:
    """Weights w_x with sum_x w_x f(x) = int A(f) dvol under ``rule``."""
    return op.evaluation_matrix(rule.nodes).T @ rule.weights


def integrate_recovered(op: RecoveryOperator, samples, rule: QuadratureRule) -> float:
    """Q(f) = int A(f) dvol, evaluated by quadrature of the recovered function."""
    return float(rule.weights @ recover(op, samples, rule.nodes))


def recovery_error(op: RecoveryOperator, f, rule: QuadratureRule, q: float) -> float:
    """L_q(vol) distance between f and A(f) on the nodes of ``rule``."""
    approx = recover(op, f(op.points.points), rule.nodes)
    err = np.abs(f(rule.nodes) - approx)
    if q == math.inf:
        return float(err.max())
    return float(np.dot(rule.weights, err**q) ** (1.0 / q))


# ------------------------------------------------------------ Sobolev norm

def _sphere_grid(rule: QuadratureRule):
    m = rule.manifold
    if not (m.is_sphere and m.dim == 2):
        raise ValueError("spectral Sobolev norms are implemented on S^2 only")
    res = rule.resolution
    if len(rule) != 2 * res * res:
        raise ValueError("expected a Gauss-Legendre product rule on S^2")
    z, wz = np.polynomial.legendre.leggauss(res)
    return res, z, wz


def harmonic_energy(values, rule: QuadratureRule) -> np.ndarray:
    """Per-degree energy sum_m |c_lm|^2 of f sampled on a product rule."""
    res, z, wz = _sphere_grid(rule)
    f = np.asarray(values, dtype=float).reshape(res, 2 * res)
    naz = 2 * res
    lmax = res - 1
    fm = np.fft.rfft(f, axis=1) * (2.0 * math.pi / naz)
    theta = np.arccos(z)
    plm = sph_legendre_p_all(lmax, lmax, theta)[0]
    energy = np.zeros(lmax + 1)
    for mm in range(lmax + 1):
        # c_lm = sum_k w_k P_lm(theta_k) F_m(theta_k), with the conjugate order doubling the energy
        c = plm[mm:, mm, :] @ (wz * fm[:, mm])
        e = np.abs(c) ** 2
        energy[mm:] += e if mm == 0 else 2.0 * e
    return energy


def sobolev_norm_sphere(values, rule: QuadratureRule, s: float):
    """(I - Laplacian)^{s/2} norm in L_2(vol) on S^2 from quadrature samples.

    Returns ``(norm, tail)`` where ``tail`` is the weighted energy share of
    the top quarter of resolved degrees, a truncation indicator.
    """
    energy = harmonic_energy(values, rule)
    ell = np.arange(energy.size)
    weighted = (1.0 + ell * (ell + 1.0)) ** s * energy
    total = float(weighted.sum())
    top = weighted[(3 * energy.size) // 4:].sum()
    return math.sqrt(total), (float(top / total) if total > 0 else 0.0)


def zonal_sobolev_norm(profile, s: float, lmax: int, nodes: int | None = None) -> float:
    """H^s norm on S^2 of the zonal function x -> profile(x . c).

    Zonal functions only carry m = 0 harmonics:
    c_l = 2 pi int_{-1}^{1} profile(t) Y_l0(t) dt.
    """
    nodes = nodes or max(4 * lmax, 256)
    t, w = np.polynomial.legendre.leggauss(nodes)
    g = profile(t)
    ell = np.arange(lmax + 1)
    p = sph_legendre_p_all(lmax, 0, np.arccos(t))[0][:, 0, :]
    c = 2.0 * math.pi * (p @ (w * g))
    return math.sqrt(float(np.sum((1.0 + ell * (ell + 1.0)) ** s * c**2)))


# -------------------------------------------------------- fooling functions

def _derivative_maxima(order: int, samples: int = 200001) -> np.ndarray:
    """sup |b^(k)| of the 1-D bump for k = 0..order, by finite differences."""
    u = np.linspace(-1.0, 1.0, samples)
    h = u[1] - u[0]
    vals = bump(u)
    out = [float(np.abs(vals).max())]
    for _ in range(order):
        vals = np.gradient(vals, h)
        out.append(float(np.abs(vals).max()))
    return np.array(out)


@dataclass
class FoolingFunction:
    """Non-negative bump in the deepest hole of P, vanishing on P."""

    manifold: Manifold
    center: np.ndarray
    radius: float
    amplitude: float
    surrogate: str
    smoothness: float

    def __call__(self, x) -> np.ndarray:
        m = self.manifold
        x = m.validate(np.atleast_2d(x))
        d = _pair_distance(m, x, np.broadcast_to(self.center, x.shape))
        return self.amplitude * bump(d / self.radius)

    def lq_norm(self, q: float) -> float:
        """L_q(vol) norm by radial integration."""
        m = self.manifold
        r = self.radius
        if q == math.inf:
            return self.amplitude * math.exp(-1.0)
        if m.is_sphere and m.dim == 2:
            val = 2.0 * math.pi * quad(lambda rho: bump(rho / r) ** q * math.sin(rho), 0.0, r, limit=200)[0]
        elif not m.is_sphere and r < 0.5:
            from scipy.special import gamma as G

            area = 2.0 * math.pi ** (m.dim / 2.0) / G(m.dim / 2.0)
            val = area * r**m.dim * quad(lambda u: bump(u) ** q * u ** (m.dim - 1), 0.0, 1.0, limit=200)[0]
        else:
            rule = quadrature_rule(m, 512 if m.dim <= 2 else 64)
            val = rule.integrate(self(rule.nodes) ** q)
        return self.amplitude * val ** (1.0 / q)


def fooling_function(m: Manifold, P: PointSet, s: float, mesh: QuadratureRule | None = None) -> FoolingFunction:
    """Bump of radius dist(x*, P) around the deepest mesh hole x*.

    The amplitude makes the surrogate norm equal to one: the spectral H^s
    norm on S^2, elsewhere max_k r^{-k} sup |b^(k)| for k <= ceil(s).
    """
    if mesh is None:
        from mslab.metrics import mesh_resolution

        mesh = quadrature_rule(m, mesh_resolution(m, P.n))
    dist = distances_to_set(m, mesh.nodes, P)
    i = int(np.argmax(dist))
    center, r = mesh.nodes[i], float(dist[i])
    if m.is_sphere and m.dim == 2:
        lmax = max(64, math.ceil(60.0 / r))
        norm = zonal_sobolev_norm(lambda t: bump(np.arccos(np.clip(t, -1.0, 1.0)) / r), s, lmax)
        surrogate = "spectral"
    else:
        k = max(0, math.ceil(s))
        maxima = _derivative_maxima(k)
        norm = float(np.max(maxima * r ** (-np.arange(k + 1, dtype=float))))
        surrogate = "derivative-sup"
    return FoolingFunction(m, center, r, 1.0 / norm, surrogate, s)


__all__ = [
    "FoolingFunction",
    "MLSConfig",
    "NearestPoints",
    "PartitionOfUnity",
    "RecoveryOperator",
    "build_partition",
    "build_recovery",
    "cubature_weights",
    "fooling_function",
    "integrate_recovered",
    "mls_fit",
    "recover",
    "recovery_error",
    "sobolev_norm_sphere",
]
