"""Independent reference computations used by several test modules."""
import math

import numpy as np
from scipy.integrate import dblquad
from scipy.spatial import ConvexHull


def hull_covering_radius(points):
    """Exact covering radius of points on S^2 from the spherical Delaunay triangulation.

    The facets of the convex hull are the Delaunay triangles; the deepest hole
    of each sits at the outward facet normal, at angle arccos(h) from its vertices.
    """
    hull = ConvexHull(points)
    normals = hull.equations[:, :3]
    offsets = -hull.equations[:, 3]
    assert np.all(offsets > 0), "points must not lie in a closed hemisphere"
    return float(np.max(np.arccos(np.clip(offsets, -1.0, 1.0))))


def square_cell_moment(h, gamma):
    """int over the square [-h/2, h/2]^2 of |x|^gamma."""
    val, _ = dblquad(lambda y, x: math.hypot(x, y) ** gamma, 0.0, h / 2, 0.0, h / 2, epsabs=1e-15, epsrel=1e-12)
    return 4.0 * val


def grid_distortion(k, gamma):
    """L_gamma distortion of the k x k torus grid by exact Voronoi cell decomposition."""
    h = 1.0 / k
    return (k * k * square_cell_moment(h, gamma)) ** (1.0 / gamma)


def lens_area_mc(x, y, t, samples, gen):
    """Monte Carlo normalized area of {z : z.x >= t, z.y >= t} on S^2."""
    z = gen.standard_normal((samples, 3))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return float(np.mean((z @ x >= t) & (z @ y >= t)))


def stolarsky_kernel(x, y):
    """Closed form of the S^2 cap kernel: 1 - |x - y| / 4 (Stolarsky's invariance)."""
    return 1.0 - np.linalg.norm(np.asarray(x) - np.asarray(y), axis=-1) / 4.0
