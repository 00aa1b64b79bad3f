# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the routines in ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport pow, sin, cos, sqrt, log, ceil, fabs, M_PI

cnp.import_array()

from ._kernels_py import ANG_Q, ANG_ORDER, ANG_LMAX, _ANG_X, _ANG_W

cdef double _Q = ANG_Q
cdef int _LMAX = ANG_LMAX


cdef inline double _gegen(int ell, double nu, double t) nogil:
    cdef double c0 = 1.0, c1 = 2.0 * nu * t, e0 = 1.0, e1 = 2.0 * nu, c2, e2
    cdef int k
    if ell == 0:
        return 1.0
    for k in range(1, ell):
        c2 = (2.0 * t * (k + nu) * c1 - (k + 2.0 * nu - 1.0) * c0) / (k + 1.0)
        e2 = (2.0 * (k + nu) * e1 - (k + 2.0 * nu - 1.0) * e0) / (k + 1.0)
        c0 = c1
        c1 = c2
        e0 = e1
        e1 = e2
    return c1 / e1


cdef inline double _ipow(double x, int m) nogil:
    cdef double out = 1.0
    while m > 0:
        out *= x
        m -= 1
    return out


cdef inline double _rpow(double base, double lam) nogil:
    """``base ** (-lam/2)`` with the common integer exponents special-cased."""
    if lam == 1.0:
        return 1.0 / sqrt(base)
    if lam == 2.0:
        return 1.0 / base
    if lam == 3.0:
        return 1.0 / (base * sqrt(base))
    if lam == 4.0:
        return 1.0 / (base * base)
    return pow(base, -0.5 * lam)


cdef inline double _panel(double a, double rs, double lo, double hi, double lam, int N, int ell,
                          const double[::1] gx, const double[::1] gw) nogil:
    cdef double half = 0.5 * (hi - lo), mid = 0.5 * (hi + lo), acc = 0.0
    cdef double th, sh, base, val
    cdef int q, nq = gx.shape[0]
    cdef double nu = 0.5 * (N - 2)
    for q in range(nq):
        th = mid + half * gx[q]
        sh = sin(0.5 * th)
        base = a + 4.0 * rs * sh * sh
        val = _rpow(base, lam) * _ipow(sin(th), N - 2)
        if ell:
            val *= _gegen(ell, nu, cos(th))
        acc += gw[q] * val
    return half * acc


def angular_kernel(r, s, double lam, int N, int ell, double s_area):
    cdef const double[::1] rv = np.ascontiguousarray(r, dtype=np.float64).ravel()
    cdef const double[::1] sv = np.ascontiguousarray(s, dtype=np.float64).ravel()
    cdef const double[::1] gx = _ANG_X
    cdef const double[::1] gw = _ANG_W
    cdef Py_ssize_t n = rv.shape[0], i
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double a, rs, sigma, lv, hi, acc
    cdef int lev, k
    cdef double logq = log(_Q)
    with nogil:
        for i in range(n):
            a = (rv[i] - sv[i]) * (rv[i] - sv[i])
            rs = rv[i] * sv[i]
            sigma = fabs(rv[i] - sv[i]) / sqrt(rs)
            if sigma > 0.0:
                lv = ceil(log(sigma / (5.0 * M_PI)) / logq)
                if lv < 1.0:
                    lv = 1.0
                if lv > _LMAX:
                    lv = _LMAX
            else:
                lv = _LMAX
            lev = <int>lv
            acc = 0.0
            hi = M_PI
            for k in range(lev):
                acc += _panel(a, rs, hi * _Q, hi, lam, N, ell, gx, gw)
                hi = hi * _Q
            acc += _panel(a, rs, 0.0, M_PI * pow(_Q, lev), lam, N, ell, gx, gw)
            out[i] = s_area * acc
    return out_arr


def riesz_direct_matrix(points, weights, psi, double lam, ipsi):
    cdef const double[:, ::1] x = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef const double[::1] ps = np.ascontiguousarray(psi, dtype=np.float64)
    cdef const double[::1] ip = np.ascontiguousarray(ipsi, dtype=np.float64)
    cdef Py_ssize_t M = x.shape[0], d = x.shape[1], p, q, k
    out_arr = np.empty((M, M), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double d2, diff, e, acc
    with nogil:
        for p in range(M):
            acc = 0.0
            for q in range(M):
                if q == p:
                    continue
                d2 = 0.0
                for k in range(d):
                    diff = x[p, k] - x[q, k]
                    d2 += diff * diff
                e = w[q] * pow(d2, -0.5 * lam)
                out[p, q] = e
                acc += e * ps[q]
            out[p, p] = (ip[p] - acc) / ps[p]
    return out_arr


def riesz_direct_probe(points, weights, f, basis, probes, coef, ibasis_probe, double lam):
    cdef const double[:, ::1] x = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef const double[::1] fv = np.ascontiguousarray(f, dtype=np.float64)
    cdef const double[:, ::1] bs = np.ascontiguousarray(basis, dtype=np.float64)
    cdef const double[:, ::1] y = np.ascontiguousarray(probes, dtype=np.float64)
    cdef const double[:, ::1] cf = np.ascontiguousarray(coef, dtype=np.float64)
    cdef const double[:, ::1] ib = np.ascontiguousarray(ibasis_probe, dtype=np.float64)
    cdef Py_ssize_t M = x.shape[0], P = y.shape[0], d = x.shape[1], K = bs.shape[1], p, q, k
    out_arr = np.empty(P, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double d2, diff, e, sub, scale, acc
    with nogil:
        for p in range(P):
            scale = 1.0
            for k in range(d):
                scale += y[p, k] * y[p, k]
            scale *= 1e-28
            acc = 0.0
            for q in range(M):
                d2 = 0.0
                for k in range(d):
                    diff = y[p, k] - x[q, k]
                    d2 += diff * diff
                if d2 <= scale:
                    continue
                e = w[q] * pow(d2, -0.5 * lam)
                sub = fv[q]
                for k in range(K):
                    sub -= cf[p, k] * bs[q, k]
                acc += e * sub
            for k in range(K):
                acc += cf[p, k] * ib[p, k]
            out[p] = acc
    return out_arr
