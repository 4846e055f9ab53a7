"""Geometry layer: round spheres S^d and flat tori T^d = R^d / Z^d.

Points are plain numpy arrays. Sphere points are unit vectors in R^(d+1);
torus points are coordinate vectors in [0, 1)^d. Batches are stacked along
the first axis.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammaln

SPHERE = "sphere"
TORUS = "torus"

SPHERE_NORM_TOL = 1e-12


@dataclass(frozen=True)
class Manifold:
    """Descriptor of a compact manifold without boundary.

    Parameters
    ----------
    kind : {"sphere", "torus"}
    dim : int
        Intrinsic dimension d.
    """

    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in (SPHERE, TORUS):
            raise ValueError(f"unknown manifold kind {self.kind!r}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.dim!r}")

    @property
    def name(self) -> str:
        return ("S" if self.kind == SPHERE else "T") + str(self.dim)

    @property
    def is_sphere(self) -> bool:
        return self.kind == SPHERE

    @property
    def embedding_dim(self) -> int:
        return self.dim + 1 if self.is_sphere else self.dim

    @property
    def total_volume(self) -> float:
        if self.is_sphere:
            k = self.dim + 1
            return float(2.0 * math.exp(0.5 * k * math.log(math.pi) - gammaln(0.5 * k)))
        return 1.0

    @property
    def injectivity_radius(self) -> float:
        return math.pi if self.is_sphere else 0.5

    @property
    def diameter(self) -> float:
        return math.pi if self.is_sphere else 0.5 * math.sqrt(self.dim)

    def validate(self, x) -> np.ndarray:
        """Return ``x`` as a float array of points, raising on invalid input."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.embedding_dim:
            raise ValueError(
                f"{self.name} points need {self.embedding_dim} coordinates, got shape {x.shape}"
            )
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite point coordinates")
        if self.is_sphere:
            dev = np.abs(np.linalg.norm(x, axis=-1) - 1.0)
            if np.any(dev > SPHERE_NORM_TOL):
                raise ValueError(f"sphere points must have unit norm (max deviation {dev.max():.3e})")
        elif np.any(x < 0.0) or np.any(x >= 1.0):
            raise ValueError("torus coordinates must lie in [0, 1)")
        return x


def sphere(d: int = 2) -> Manifold:
    return Manifold(SPHERE, d)


def torus(d: int = 2) -> Manifold:
    return Manifold(TORUS, d)


def from_name(name: str) -> Manifold:
    """Parse names like ``S2`` or ``T2``."""
    m = re.fullmatch(r"([ST])(\d+)", name.strip().upper())
    if not m:
        raise ValueError(f"unknown manifold {name!r}; expected e.g. S1, S2, T2")
    return Manifold(SPHERE if m.group(1) == "S" else TORUS, int(m.group(2)))


def unit_ball_volume(d: int) -> float:
    """Lebesgue volume of the unit ball in R^d."""
    return float(math.exp(0.5 * d * math.log(math.pi) - gammaln(0.5 * d + 1.0)))


def wrap_torus(x: np.ndarray) -> np.ndarray:
    """Reduce coordinates into [0, 1)."""
    y = np.mod(x, 1.0)
    # np.mod(-1e-18, 1.0) == 1.0 in floating point
    return np.where(y >= 1.0, 0.0, y)


@dataclass
class PointSet:
    manifold: Manifold
    points: np.ndarray
    label: str = ""

    def __post_init__(self):
        pts = self.manifold.validate(self.points)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("a point set needs at least one point")
        self.points = pts

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def with_points(self, points, label=None) -> "PointSet":
        return PointSet(self.manifold, points, self.label if label is None else label)


@dataclass
class QuadratureRule:
    manifold: Manifold
    nodes: np.ndarray
    weights: np.ndarray
    resolution: int
    degree: int | None = None

    def __post_init__(self):
        if np.any(self.weights <= 0):
            raise ValueError("quadrature weights must be positive")

    def __len__(self) -> int:
        return self.weights.size

    def integrate(self, values) -> float:
        # compensated summation: exact for constants, independent of BLAS blocking
        values = np.asarray(values, dtype=float)
        return math.fsum(self.weights * values)

    def refined(self) -> "QuadratureRule":
        """Rule of doubled resolution on the same manifold."""
        return quadrature_rule(self.manifold, 2 * self.resolution)


@dataclass(frozen=True)
class RandomSource:
    """Seeded, splittable random stream.

    Draws come from a Philox counter-based generator keyed by
    ``(seed, stream)``, so a substream depends only on its key and never on
    how many other streams were consumed before it.
    """

    seed: int
    stream: tuple = field(default=())

    def __post_init__(self):
        if isinstance(self.stream, int):
            object.__setattr__(self, "stream", (self.stream,))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed) & (2**64 - 1), spawn_key=tuple(self.stream))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, *key: int) -> "RandomSource":
        return RandomSource(self.seed, tuple(self.stream) + tuple(int(k) for k in key))


# ---------------------------------------------------------------- distances

def geodesic_distance(m: Manifold, x, y) -> np.ndarray | float:
    """Geodesic distance, broadcasting over leading axes."""
    x = m.validate(x)
    y = m.validate(y)
    if m.is_sphere:
        dot = np.clip(np.sum(x * y, axis=-1), -1.0, 1.0)
        out = np.arccos(dot)
    else:
        diff = x - y
        diff -= np.round(diff)
        out = np.linalg.norm(diff, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def chord_to_geodesic(m: Manifold, chord: np.ndarray) -> np.ndarray:
    """Map Euclidean nearest-neighbour distances to geodesic ones.

    On the sphere the chord length c corresponds to the angle 2 asin(c/2);
    on the flat torus the periodic Euclidean distance already is geodesic.
    """
    if m.is_sphere:
        return 2.0 * np.arcsin(np.minimum(np.asarray(chord) * 0.5, 1.0))
    return np.asarray(chord, dtype=float)


def geodesic_to_chord(m: Manifold, r):
    if m.is_sphere:
        return 2.0 * np.sin(0.5 * np.minimum(r, math.pi))
    return r


# ------------------------------------------------------------------ charts

def tangent_frame(m: Manifold, p) -> np.ndarray:
    """Orthonormal tangent frame at ``p`` as a (d, D) array.

    Sphere frames come from Gram-Schmidt on the coordinate axes ordered by
    increasing ``|p_i|`` (ties by axis index). Torus frames are the
    coordinate axes.
    """
    p = m.validate(p)
    if not m.is_sphere:
        return np.eye(m.dim)
    order = np.argsort(np.abs(p), kind="stable")
    basis = []
    for i in order:
        v = np.zeros(p.size)
        v[i] = 1.0
        v -= np.dot(v, p) * p
        for b in basis:
            v -= np.dot(v, b) * b
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            basis.append(v / nv)
        if len(basis) == m.dim:
            break
    return np.array(basis)


def exp_map(m: Manifold, p, v, frame: np.ndarray | None = None) -> np.ndarray:
    """Exponential map at ``p`` applied to tangent coordinates ``v``.

    ``v`` has shape (d,) or (k, d); the tangent coordinates refer to
    ``frame`` (default :func:`tangent_frame`).
    """
    p = m.validate(p)
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != m.dim:
        raise ValueError(f"tangent vectors need {m.dim} coordinates, got shape {v.shape}")
    r = np.linalg.norm(v, axis=-1)
    if np.any(r >= m.injectivity_radius):
        raise ValueError("tangent vector length must be below the injectivity radius")
    if not m.is_sphere:
        return wrap_torus(p + v)
    if frame is None:
        frame = tangent_frame(m, p)
    w = v @ frame
    r = r[..., None]
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(r > 0, w / np.where(r > 0, r, 1.0), 0.0)
    q = np.cos(r) * p + np.sin(r) * unit
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def log_map(m: Manifold, p, q, frame: np.ndarray | None = None) -> np.ndarray:
    """Inverse of :func:`exp_map` on the injectivity ball around ``p``."""
    p = m.validate(p)
    q = m.validate(q)
    if not m.is_sphere:
        diff = q - p
        diff -= np.round(diff)
        if np.any(np.linalg.norm(diff, axis=-1) >= m.injectivity_radius):
            raise ValueError("point lies outside the injectivity ball")
        return diff
    if frame is None:
        frame = tangent_frame(m, p)
    c = np.sum(q * p, axis=-1)
    w = q - c[..., None] * p
    s = np.linalg.norm(w, axis=-1)
    theta = np.arctan2(s, c)
    if np.any(theta >= m.injectivity_radius) or np.any((s == 0) & (c < 0)):
        raise ValueError("point lies outside the injectivity ball")
    scale = np.where(s > 0, theta / np.where(s > 0, s, 1.0), 0.0)
    return (w @ frame.T) * scale[..., None]


# ---------------------------------------------------------------- sampling

def sample_uniform(m: Manifold, n: int, rng: RandomSource, label: str = "random") -> PointSet:
    """i.i.d. points from the normalized volume measure."""
    if n < 1:
        raise ValueError("n must be at least 1")
    gen = rng.generator()
    if m.is_sphere:
        x = gen.standard_normal((n, m.embedding_dim))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
    else:
        x = gen.random((n, m.dim))
    return PointSet(m, x, label)


def fibonacci_sphere(n: int, label: str = "fibonacci") -> PointSet:
    """Spherical Fibonacci lattice on S^2 (golden-angle spiral, offset 1/2)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    k = np.arange(n, dtype=float)
    z = 1.0 - (2.0 * k + 1.0) / n
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = k * math.pi * (3.0 - math.sqrt(5.0))
    x = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return PointSet(sphere(2), x, label)


def torus_grid(k: int, d: int = 2, offset: float = 0.5, label: str = "grid") -> PointSet:
    """Regular k^d grid on T^d with points at (i + offset)/k."""
    axes = [(np.arange(k) + offset) / k for _ in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = wrap_torus(np.column_stack([g.ravel() for g in mesh]))
    return PointSet(torus(d), pts, label)


def random_rotation(gen: np.random.Generator, dim: int = 3) -> np.ndarray:
    """Haar-distributed rotation matrix (determinant +1)."""
    a = gen.standard_normal((dim, dim))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


# -------------------------------------------------------------- quadrature

def quadrature_rule(m: Manifold, resolution: int) -> QuadratureRule:
    """Positive-weight quadrature over the Riemannian volume.

    S^2: Gauss-Legendre in the polar cosine times the uniform rule in
    azimuth (2 * resolution^2 nodes, exact for spherical harmonics up to
    degree 2 * resolution - 1). S^1: uniform nodes. T^d: midpoint grid with
    resolution^d nodes.
    """
    if resolution < 1:
        raise ValueError("resolution must be at least 1")
    if m.is_sphere:
        if m.dim == 1:
            ang = 2.0 * math.pi * (np.arange(resolution) + 0.5) / resolution
            nodes = np.column_stack([np.cos(ang), np.sin(ang)])
            w = np.full(resolution, 2.0 * math.pi / resolution)
            return QuadratureRule(m, nodes, w, resolution, resolution - 1)
        if m.dim != 2:
            raise ValueError("sphere quadrature is implemented for d = 1, 2 only")
        z, wz = np.polynomial.legendre.leggauss(resolution)
        naz = 2 * resolution
        phi = 2.0 * math.pi * np.arange(naz) / naz
        rho = np.sqrt(1.0 - z * z)
        nodes = np.empty((resolution, naz, 3))
        nodes[..., 0] = rho[:, None] * np.cos(phi)[None, :]
        nodes[..., 1] = rho[:, None] * np.sin(phi)[None, :]
        nodes[..., 2] = z[:, None]
        nodes = nodes.reshape(-1, 3)
        nodes /= np.linalg.norm(nodes, axis=1, keepdims=True)
        w = np.repeat(wz * (2.0 * math.pi / naz), naz)
        return QuadratureRule(m, nodes, w, resolution, 2 * resolution - 1)
    pts = torus_grid(resolution, m.dim).points
    w = np.full(pts.shape[0], 1.0 / pts.shape[0])
    return QuadratureRule(m, pts, w, resolution, 1)


def ball_volume(m: Manifold, p, r: float) -> float:
    """Riemannian volume of the geodesic ball B(p, r)."""
    if r <= 0:
        raise ValueError("radius must be positive")
    m.validate(p)
    r = min(float(r), m.diameter)
    if m.is_sphere:
        if m.dim == 1:
            return 2.0 * r
        if m.dim == 2:
            return 4.0 * math.pi * math.sin(0.5 * r) ** 2
        from scipy.integrate import quad

        area = sphere(m.dim - 1).total_volume
        return area * quad(lambda t: math.sin(t) ** (m.dim - 1), 0.0, r)[0]
    if r < 0.5:
        return unit_ball_volume(m.dim) * r**m.dim
    rule = quadrature_rule(m, 256 if m.dim <= 2 else 48)
    inside = geodesic_distance(m, rule.nodes, np.broadcast_to(p, rule.nodes.shape)) < r
    return float(np.sum(rule.weights[inside]))


# --------------------------------------------------------------------- I/O

def write_points(path, P: PointSet) -> None:
    """Write the text point format: a header line then one point per line."""
    lines = [f"# manifold={P.manifold.name} n={P.n}"]
    lines += [" ".join(f"{c:.17g}" for c in row) for row in P.points]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_points(path, label: str | None = None) -> PointSet:
    path = Path(path)
    text = path.read_text(encoding="utf-8").splitlines()
    if not text or not text[0].startswith("#"):
        raise ValueError(f"{path}: missing '# manifold=... n=...' header")
    meta = dict(tok.split("=", 1) for tok in text[0][1:].split() if "=" in tok)
    if "manifold" not in meta or "n" not in meta:
        raise ValueError(f"{path}: header must define manifold= and n=")
    m = from_name(meta["manifold"])
    rows = []
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        vals = line.split()
        if len(vals) != m.embedding_dim:
            raise ValueError(
                f"{path}:{lineno}: expected {m.embedding_dim} coordinates, got {len(vals)}"
            )
        rows.append([float(v) for v in vals])
    if len(rows) != int(meta["n"]):
        raise ValueError(f"{path}: header says n={meta['n']} but found {len(rows)} points")
    return PointSet(m, np.array(rows, dtype=float), label if label is not None else path.stem)
