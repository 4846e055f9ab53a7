"""Pure-numpy implementations of the hot kernels.

Signatures match the compiled module ``mslab._core`` exactly; see
:mod:`mslab.kernels` for the selection logic.
"""
import numpy as np

# Gauss-Legendre rule for the smooth middle segment of the cap-kernel
# t-integral; the cubic map t = -c + 2c(3u^2 - 2u^3) flattens the
# square-root behaviour of the lens area at both ends.
N_LUNE = 64
_GL_X, _GL_W = np.polynomial.legendre.leggauss(N_LUNE)
LUNE_U = 0.5 * (_GL_X + 1.0)
LUNE_W = 0.5 * _GL_W

COND_LIMIT = 1e12


def lens_measure(d, t, phi):
    """Normalized measure of C(x,t) ∩ C(y,t) for two centers at angle phi."""
    t = np.asarray(t, dtype=float)
    phi = np.asarray(phi, dtype=float)
    c = np.cos(0.5 * phi)
    theta = np.arccos(np.clip(t, -1.0, 1.0))
    if d == 1:
        length = np.maximum(0.0, 2.0 * theta - phi) + np.maximum(0.0, 2.0 * theta - (2.0 * np.pi - phi))
        return length / (2.0 * np.pi)
    out = np.where(t >= c, 0.0, -t)
    mid = (t < c) & (t > -c)
    if np.any(mid):
        tm = np.broadcast_to(t, np.broadcast(t, phi).shape)[mid]
        pm = np.broadcast_to(phi, np.broadcast(t, phi).shape)[mid]
        s = np.sqrt(1.0 - tm * tm)
        # half-angle beta of each arc: cos(beta) = t (1 - cos phi) / (sin phi sin theta)
        cb = np.clip(tm * np.tan(0.5 * pm) / s, -1.0, 1.0)
        # vertex angle zeta from sin(zeta/2) = sin(phi/2)/sin(theta); arccos of
        # (cos phi - t^2)/(1 - t^2) loses half the digits near zeta = 0
        zeta = 2.0 * np.arcsin(np.minimum(1.0, np.sin(0.5 * pm) / s))
        area = 2.0 * np.pi - 4.0 * tm * np.arccos(cb) - 2.0 * zeta
        out = np.array(out, dtype=float, copy=True)
        out[mid] = area / (4.0 * np.pi)
    return out


def _arccos_antiderivative(t):
    return t * np.arccos(t) - np.sqrt(np.maximum(0.0, 1.0 - t * t))


def cap_kernel_angle(d, phi):
    """Cap kernel K as a function of the geodesic angle, d in {1, 2}."""
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    c = np.cos(0.5 * phi)
    if d == 1:
        # arc lengths are piecewise linear in arccos(t); integrate exactly
        f0 = _arccos_antiderivative(-1.0)
        near = 2.0 * (_arccos_antiderivative(c) - f0) - phi * (1.0 + c)
        wrap = 2.0 * (_arccos_antiderivative(-c) - f0) - (2.0 * np.pi - phi) * (1.0 - c)
        return (near + wrap) / (2.0 * np.pi)
    if d != 2:
        raise ValueError("analytic cap kernel is available for d = 1, 2")
    cc = c[:, None]
    t = -cc + 2.0 * cc * (3.0 * LUNE_U**2 - 2.0 * LUNE_U**3)
    dt = 2.0 * cc * (6.0 * LUNE_U - 6.0 * LUNE_U**2)
    lens = lens_measure(2, t, phi[:, None])
    # for t <= -c the caps cover the sphere and the lens is 2 sigma(C) - 1 = -t
    return 0.5 * (1.0 - c * c) + np.sum(LUNE_W * dt * lens, axis=1)


def cap_gram(x, d):
    """Dense Gram matrix of the cap kernel for unit vectors ``x`` (n, d+1)."""
    x = np.ascontiguousarray(x, dtype=float)
    n = x.shape[0]
    g = np.empty((n, n))
    for i in range(n):
        diff = x[i:] - x[i]
        phi = 2.0 * np.arcsin(np.minimum(0.5 * np.sqrt(np.einsum("ij,ij->i", diff, diff)), 1.0))
        row = cap_kernel_angle(d, phi)
        g[i, i:] = row
        g[i:, i] = row
    return g


def _solve_local(y, w, exps, nb):
    """Return MLS coefficients for one node or None if ill-conditioned."""
    basis = np.prod(y[:, None, :] ** exps[None, :nb, :], axis=2)
    gram = (basis * w[:, None]).T @ basis
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        return None
    piv = np.diag(chol)
    if piv.min() <= 0.0 or (piv.max() / piv.min()) ** 2 > COND_LIMIT:
        return None
    rhs = np.zeros(nb)
    rhs[0] = 1.0
    a = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
    return w * (basis @ a)


def mls_coefficients(pts, indptr, indices, evals, radius, exps, nbasis):
    """Moving-least-squares reconstruction coefficients.

    For every evaluation node ``e`` the neighbours ``indices[indptr[e]:
    indptr[e+1]]`` of ``pts`` receive coefficients ``u`` such that the MLS
    value at ``evals[e]`` is ``sum(u * f[neighbours])``. ``nbasis`` lists
    the basis sizes per degree (descending degree order is tried from the
    end). Returns ``(coef, degree_used)``; degree ``-1`` marks a hole.
    """
    n_eval = evals.shape[0]
    coef = np.zeros(indices.shape[0])
    used = np.full(n_eval, -1, dtype=np.int64)
    top = len(nbasis) - 1
    for e in range(n_eval):
        lo, hi = indptr[e], indptr[e + 1]
        if hi == lo:
            continue
        nb_idx = indices[lo:hi]
        r = radius[e]
        y = (pts[nb_idx] - evals[e]) / r
        rho = np.sqrt(np.sum(y * y, axis=1))
        q = np.maximum(0.0, 1.0 - rho)
        w = q**4 * (4.0 * rho + 1.0)
        if not np.any(w > 0):
            continue
        for deg in range(top, -1, -1):
            u = _solve_local(y, w, exps, nbasis[deg])
            if u is not None:
                coef[lo:hi] = u
                used[e] = deg
                break
    return coef, used
