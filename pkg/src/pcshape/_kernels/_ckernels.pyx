# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()

# quadrature terms below exp(-40) of the peak are dropped (relative effect < 1e-15)
cdef double _SKIP = -40.0


def backward_sweep(const int[::1] p1, const int[::1] p2,
                   const double[::1] d1, const double[::1] d2,
                   Py_ssize_t root, seg_starts):
    cdef Py_ssize_t n = root + 1
    adj = np.zeros(n)
    cdef double[::1] a = adj
    cdef Py_ssize_t i
    cdef int j
    cdef double g
    a[root] = 1.0
    for i in range(root, -1, -1):
        g = a[i]
        if g == 0.0:
            continue
        j = p1[i]
        if j >= 0:
            a[j] += g * d1[i]
        j = p2[i]
        if j >= 0:
            a[j] += g * d2[i]
    return adj


def awgn_pair_terms(const double[::1] yre, const double[::1] yim,
                    const double[::1] cre, const double[::1] cim,
                    const double[::1] logp, double inv_sigma2):
    cdef Py_ssize_t n_y = yre.shape[0], n_c = cre.shape[0], n, m
    dre_a = np.empty((n_y, n_c))
    dim_a = np.empty((n_y, n_c))
    logit_a = np.empty((n_y, n_c))
    e_a = np.empty((n_y, n_c))
    mx_a = np.empty(n_y)
    cdef double[:, ::1] dre = dre_a
    cdef double[:, ::1] dim = dim_a
    cdef double[:, ::1] logit = logit_a
    cdef double[:, ::1] e = e_a
    cdef double[::1] mx = mx_a
    cdef double a, b, v, best
    for n in range(n_y):
        best = -1e308
        for m in range(n_c):
            a = yre[n] - cre[m]
            b = yim[n] - cim[m]
            dre[n, m] = a
            dim[n, m] = b
            v = -(a * a + b * b) * inv_sigma2 + logp[m]
            logit[n, m] = v
            if v > best:
                best = v
        mx[n] = best
        for m in range(n_c):
            e[n, m] = exp(logit[n, m] - best)
    return dre_a, dim_a, logit_a, e_a, mx_a


def imdd_loglik(y_in, x_in, double sigma1, double sigma2, Py_ssize_t n_nodes,
                double coverage=8.0):
    cdef const double[::1] y = np.ascontiguousarray(y_in, dtype=np.float64)
    cdef const double[::1] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef Py_ssize_t n_y = y.shape[0], n_x = x.shape[0], n, m, i
    ll_a = np.empty((n_y, n_x))
    dy_a = np.empty((n_y, n_x))
    dx_a = np.empty((n_y, n_x))
    cdef double[:, ::1] ll = ll_a
    cdef double[:, ::1] dy = dy_a
    cdef double[:, ::1] dx = dx_a
    u_a = np.empty(n_nodes)
    u2_a = np.empty(n_nodes)
    rho_a = np.empty(n_nodes)
    g_a = np.empty(n_nodes)
    cdef double[::1] u = u_a
    cdef double[::1] u2 = u2_a
    cdef double[::1] rho = rho_a
    cdef double[::1] g = g_a
    cdef double a1 = 0.5 / (sigma1 * sigma1)
    cdef double a2 = 0.5 / (sigma2 * sigma2)
    cdef double norm = log(2.0 * np.pi * sigma1 * sigma2)
    cdef double xm, u_max, h, yn, r, amax, e1, e2, w, um, s, sx, sy
    for m in range(n_x):
        xm = x[m]
        u_max = xm + coverage * sigma1
        h = u_max / (n_nodes - 1)
        for i in range(n_nodes):
            u[i] = u_max * (<double>i / <double>(n_nodes - 1))
            u2[i] = u[i] * u[i]
            # N(u; -x) / N(u; x)
            rho[i] = exp(-4.0 * a1 * u[i] * xm)
        for n in range(n_y):
            yn = y[n]
            amax = -1e308
            for i in range(n_nodes):
                r = yn - u2[i]
                um = u[i] - xm
                g[i] = -a2 * r * r - a1 * um * um
                if g[i] > amax:
                    amax = g[i]
            s = 0.0
            sx = 0.0
            sy = 0.0
            for i in range(n_nodes):
                if g[i] - amax < _SKIP:
                    continue
                w = 0.5 if (i == 0 or i == n_nodes - 1) else 1.0
                e1 = exp(g[i] - amax) * w
                e2 = e1 * rho[i]
                s += e1 + e2
                sx += e1 * (u[i] - xm) - e2 * (u[i] + xm)
                sy += (e1 + e2) * (yn - u2[i])
            ll[n, m] = amax + log(s * h) - norm
            dx[n, m] = sx * (2.0 * a1) / s
            dy[n, m] = -sy * (2.0 * a2) / s
    return ll_a, dy_a, dx_a
