# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner sampling kernels (see ``_pykernels`` for the reference)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, log1p, exp, expm1, isfinite, fabs, INFINITY
from scipy.special.cython_special cimport ndtr, ndtri, log_ndtr

cnp.import_array()

cdef double TAIL_CLIP = 37.0


cdef inline double _ln_normal_prob(double a, double b) noexcept nogil:
    cdef double la, lb
    if a > 0:
        la = log_ndtr(-a)
        lb = log_ndtr(-b)
        if la == -INFINITY:
            return -INFINITY
        return la + log1p(-exp(lb - la))
    if b < 0:
        la = log_ndtr(a)
        lb = log_ndtr(b)
        if lb == -INFINITY:
            return -INFINITY
        return lb + log1p(-exp(la - lb))
    return log1p(-ndtr(a) - ndtr(-b))


cdef inline double _upper_tail(double lo, double hi, double u) noexcept nogil:
    cdef double qa, qb, l2, span
    if lo > TAIL_CLIP:
        l2 = lo * lo
        span = -expm1(0.5 * (l2 - hi * hi))
        return sqrt(l2 - 2.0 * log1p(-u * span))
    qa = ndtr(-lo)
    qb = ndtr(-hi)
    return -ndtri(qa - u * (qa - qb))


cdef inline double _truncnorm(double lo, double hi, double u) noexcept nogil:
    cdef double x, pa, pb, q, qa, qb, scale
    if lo >= 0:
        x = _upper_tail(lo, hi, u)
    elif hi <= 0:
        x = -_upper_tail(-hi, -lo, 1.0 - u)
    else:
        pa = ndtr(lo)
        pb = ndtr(hi)
        q = pa + u * (pb - pa)
        if q <= 0.5:
            x = ndtri(q)
        else:
            qa = ndtr(-lo)
            qb = ndtr(-hi)
            x = -ndtri(qb + (1.0 - u) * (qa - qb))
    scale = fabs(lo)
    if scale < 1.0:
        scale = 1.0
    if (hi - lo) < 1e-10 * scale:
        x = lo + u * (hi - lo)
    if not isfinite(x):
        x = lo if isfinite(lo) else hi
    if x < lo:
        x = lo
    elif x > hi:
        x = hi
    return x


def ln_normal_prob(a, b):
    cdef cnp.ndarray[double, ndim=1] av, bv, out
    a_arr, b_arr = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    shape = a_arr.shape
    av = np.ascontiguousarray(a_arr, dtype=float).ravel()
    bv = np.ascontiguousarray(b_arr, dtype=float).ravel()
    out = np.empty(av.shape[0])
    cdef Py_ssize_t i
    for i in range(av.shape[0]):
        out[i] = _ln_normal_prob(av[i], bv[i])
    return out.reshape(shape)


def truncnorm_icdf(lo, hi, u):
    cdef cnp.ndarray[double, ndim=1] lv, hv, uv, out
    l_arr, h_arr, u_arr = np.broadcast_arrays(
        np.asarray(lo, dtype=float), np.asarray(hi, dtype=float), np.asarray(u, dtype=float))
    shape = l_arr.shape
    lv = np.ascontiguousarray(l_arr, dtype=float).ravel()
    hv = np.ascontiguousarray(h_arr, dtype=float).ravel()
    uv = np.ascontiguousarray(u_arr, dtype=float).ravel()
    out = np.empty(lv.shape[0])
    cdef Py_ssize_t i
    for i in range(lv.shape[0]):
        out[i] = _truncnorm(lv[i], hv[i], uv[i])
    return out.reshape(shape)


def tilted_proposals(double[:, ::1] L, double[::1] lb, double[::1] ub,
                     double[::1] mu, double[:, ::1] U):
    cdef Py_ssize_t N = U.shape[0], n = U.shape[1]
    cdef Py_ssize_t s, k, j
    cdef double col, tl, tu, z
    Z_arr = np.zeros((N, n))
    lp_arr = np.zeros(N)
    cdef double[:, ::1] Z = Z_arr
    cdef double[::1] logpr = lp_arr
    with nogil:
        for s in range(N):
            for k in range(n):
                col = 0.0
                for j in range(k):
                    col = col + L[k, j] * Z[s, j]
                tl = lb[k] - mu[k] - col
                tu = ub[k] - mu[k] - col
                z = mu[k] + _truncnorm(tl, tu, U[s, k])
                Z[s, k] = z
                logpr[s] += _ln_normal_prob(tl, tu) + 0.5 * mu[k] * mu[k] - mu[k] * z
    return Z_arr, lp_arr


def gibbs_box(double[:, ::1] Q, double[::1] mean, double[::1] lb, double[::1] ub,
              x0, double[:, ::1] U, Py_ssize_t burnin):
    cdef Py_ssize_t sweeps = U.shape[0], n = U.shape[1]
    cdef Py_ssize_t s, k, j
    cdef double shift, m, sd, z, v
    x_arr = np.array(x0, dtype=float)
    d_arr = x_arr - np.asarray(mean)
    out_arr = np.empty((sweeps - burnin, n))
    cdef double[::1] x = x_arr
    cdef double[::1] d = d_arr
    cdef double[:, ::1] out = out_arr
    with nogil:
        for s in range(sweeps):
            for k in range(n):
                shift = 0.0
                for j in range(n):
                    if j != k:
                        shift = shift + Q[k, j] * d[j]
                shift = shift / Q[k, k]
                m = mean[k] - shift
                sd = 1.0 / sqrt(Q[k, k])
                z = _truncnorm((lb[k] - m) / sd, (ub[k] - m) / sd, U[s, k])
                v = m + sd * z
                if v < lb[k]:
                    v = lb[k]
                elif v > ub[k]:
                    v = ub[k]
                x[k] = v
                d[k] = v - mean[k]
            if s >= burnin:
                for k in range(n):
                    out[s - burnin, k] = x[k]
    return out_arr
