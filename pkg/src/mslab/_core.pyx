# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Mirrors mslab._fallback function by function."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, cos, sin, tan, acos, asin, fmin, fmax, pow, M_PI

cnp.import_array()

from mslab._fallback import LUNE_U, LUNE_W, COND_LIMIT

DEF MAXB = 64


cdef inline double _arccos_anti(double t) nogil:
    return t * acos(t) - sqrt(fmax(0.0, 1.0 - t * t))


cdef inline double _lens2(double t, double c, double tan_h, double sin_h) nogil:
    # tan_h = tan(phi / 2), sin_h = sin(phi / 2), hoisted out of the t loop
    cdef double s, cb, zeta
    if t >= c:
        return 0.0
    if t <= -c:
        return -t
    s = sqrt(1.0 - t * t)
    cb = fmin(1.0, fmax(-1.0, t * tan_h / s))
    zeta = 2.0 * asin(fmin(1.0, sin_h / s))
    return (2.0 * M_PI - 4.0 * t * acos(cb) - 2.0 * zeta) / (4.0 * M_PI)


cdef double _kernel(int d, double phi, const double[::1] u, const double[::1] w) nogil:
    cdef double c = cos(0.5 * phi)
    cdef double f0, near, wrap, acc, uu, t, dt, tan_h, sin_h
    cdef Py_ssize_t k
    if d == 1:
        f0 = _arccos_anti(-1.0)
        near = 2.0 * (_arccos_anti(c) - f0) - phi * (1.0 + c)
        wrap = 2.0 * (_arccos_anti(-c) - f0) - (2.0 * M_PI - phi) * (1.0 - c)
        return (near + wrap) / (2.0 * M_PI)
    tan_h = tan(0.5 * phi)
    sin_h = sin(0.5 * phi)
    acc = 0.0
    for k in range(u.shape[0]):
        uu = u[k]
        t = -c + 2.0 * c * (3.0 * uu * uu - 2.0 * uu * uu * uu)
        dt = 2.0 * c * (6.0 * uu - 6.0 * uu * uu)
        acc += w[k] * dt * _lens2(t, c, tan_h, sin_h)
    return 0.5 * (1.0 - c * c) + acc


def cap_kernel_angle(int d, phi):
    if d != 1 and d != 2:
        raise ValueError("analytic cap kernel is available for d = 1, 2")
    cdef double[::1] ph = np.ascontiguousarray(np.atleast_1d(phi), dtype=np.float64)
    cdef double[::1] u = LUNE_U
    cdef double[::1] w = LUNE_W
    out = np.empty(ph.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t i
    for i in range(ph.shape[0]):
        o[i] = _kernel(d, ph[i], u, w)
    return out


def cap_gram(x, int d):
    if d != 1 and d != 2:
        raise ValueError("analytic cap kernel is available for d = 1, 2")
    cdef double[:, ::1] X = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = X.shape[0], D = X.shape[1]
    cdef double[::1] u = LUNE_U
    cdef double[::1] w = LUNE_W
    g = np.empty((n, n))
    cdef double[:, ::1] G = g
    cdef Py_ssize_t i, j, k
    cdef double acc, diff, phi, val
    with nogil:
        for i in range(n):
            for j in range(i, n):
                acc = 0.0
                for k in range(D):
                    diff = X[j, k] - X[i, k]
                    acc = acc + diff * diff
                phi = 2.0 * asin(fmin(0.5 * sqrt(acc), 1.0))
                val = _kernel(d, phi, u, w)
                G[i, j] = val
                G[j, i] = val
    return g


cdef int _chol_solve(double* A, int nb, double* a, double cond_limit) nogil:
    """In-place Cholesky of the nb x nb matrix A, then solve A a = e_0.

    Returns 0 on success, 1 on failure or when the pivot ratio exceeds the
    condition limit.
    """
    cdef int i, j, k
    cdef double s, pmin = 1e300, pmax = 0.0
    for j in range(nb):
        s = A[j * nb + j]
        for k in range(j):
            s -= A[j * nb + k] * A[j * nb + k]
        if not (s > 0.0):
            return 1
        s = sqrt(s)
        A[j * nb + j] = s
        if s < pmin:
            pmin = s
        if s > pmax:
            pmax = s
        for i in range(j + 1, nb):
            s = A[i * nb + j]
            for k in range(j):
                s -= A[i * nb + k] * A[j * nb + k]
            A[i * nb + j] = s / A[j * nb + j]
    if (pmax / pmin) * (pmax / pmin) > cond_limit:
        return 1
    # forward: L y = e0
    for i in range(nb):
        s = 1.0 if i == 0 else 0.0
        for k in range(i):
            s -= A[i * nb + k] * a[k]
        a[i] = s / A[i * nb + i]
    # backward: L^T a = y
    for i in range(nb - 1, -1, -1):
        s = a[i]
        for k in range(i + 1, nb):
            s -= A[k * nb + i] * a[k]
        a[i] = s / A[i * nb + i]
    return 0


def mls_coefficients(pts, indptr, indices, evals, radius, exps, nbasis):
    cdef double[:, ::1] P = np.ascontiguousarray(pts, dtype=np.float64)
    cdef long long[::1] ptr = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef long long[::1] idx = np.ascontiguousarray(indices, dtype=np.int64)
    cdef double[:, ::1] Z = np.ascontiguousarray(evals, dtype=np.float64)
    cdef double[::1] R = np.ascontiguousarray(radius, dtype=np.float64)
    cdef long long[:, ::1] E = np.ascontiguousarray(exps, dtype=np.int64)
    cdef long long[::1] NB = np.ascontiguousarray(nbasis, dtype=np.int64)
    cdef Py_ssize_t n_eval = Z.shape[0], dim = Z.shape[1]
    cdef int top = NB.shape[0] - 1
    cdef double cond_limit = COND_LIMIT
    if NB[top] > MAXB:
        raise ValueError("polynomial basis too large")

    coef_arr = np.zeros(idx.shape[0])
    used_arr = np.full(n_eval, -1, dtype=np.int64)
    cdef double[::1] coef = coef_arr
    cdef long long[::1] used = used_arr

    cdef Py_ssize_t maxnb = 0, e
    for e in range(n_eval):
        if ptr[e + 1] - ptr[e] > maxnb:
            maxnb = ptr[e + 1] - ptr[e]
    cdef double[:, ::1] basis = np.empty((max(maxnb, 1), MAXB))
    cdef double[::1] wt = np.empty(max(maxnb, 1))
    cdef double[::1] y = np.empty(max(dim, 1))
    cdef double A[MAXB * MAXB]
    cdef double a[MAXB]
    cdef Py_ssize_t lo, hi, m, i, j, k, b
    cdef int deg, nb, anypos
    cdef double r, rho, q, prod, s, val

    with nogil:
        for e in range(n_eval):
            lo = ptr[e]
            hi = ptr[e + 1]
            if hi == lo:
                continue
            r = R[e]
            anypos = 0
            for m in range(hi - lo):
                rho = 0.0
                for k in range(dim):
                    y[k] = (P[idx[lo + m], k] - Z[e, k]) / r
                    rho += y[k] * y[k]
                rho = sqrt(rho)
                q = fmax(0.0, 1.0 - rho)
                wt[m] = q * q * q * q * (4.0 * rho + 1.0)
                if wt[m] > 0.0:
                    anypos = 1
                for b in range(NB[top]):
                    prod = 1.0
                    for k in range(dim):
                        if E[b, k] > 0:
                            prod *= pow(y[k], <double>E[b, k])
                    basis[m, b] = prod
            if not anypos:
                continue
            for deg in range(top, -1, -1):
                nb = <int>NB[deg]
                for i in range(nb):
                    for j in range(i + 1):
                        s = 0.0
                        for m in range(hi - lo):
                            s += wt[m] * basis[m, i] * basis[m, j]
                        A[i * nb + j] = s
                        A[j * nb + i] = s
                if _chol_solve(A, nb, a, cond_limit) == 0:
                    for m in range(hi - lo):
                        val = 0.0
                        for b in range(nb):
                            val += basis[m, b] * a[b]
                        coef[lo + m] = wt[m] * val
                    used[e] = deg
                    break
    return coef_arr, used_arr
