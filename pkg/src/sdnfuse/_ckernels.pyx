# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-row kernels: Kumaraswamy inverse, stick-breaking, entropy
function and row angles, each with its derivative.

Mirrors ``_pykernels`` in semantics; loops run row by row so every row's
reductions happen in a fixed order.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, acos, fabs, pow

cnp.import_array()

cdef double W_FLOOR = 1e-12
cdef double BETA_FLOOR = 1e-12


def kuma_forward(const double[:, ::1] u, const double[:, ::1] beta):
    cdef Py_ssize_t n = u.shape[0], k = u.shape[1], i, j
    out = np.empty((n, k))
    cdef double[:, ::1] v = out
    cdef double b, w
    for i in range(n):
        b = beta[i, 0]
        if b < BETA_FLOOR:
            b = BETA_FLOOR
        for j in range(k):
            w = 1.0 - u[i, j]
            if w < W_FLOOR:
                w = W_FLOOR
            v[i, j] = 1.0 - exp(log(w) / b)
    return out


def kuma_partials(const double[:, ::1] u, const double[:, ::1] beta):
    cdef Py_ssize_t n = u.shape[0], k = u.shape[1], i, j
    v_arr = np.empty((n, k))
    du_arr = np.empty((n, k))
    db_arr = np.empty((n, k))
    cdef double[:, ::1] v = v_arr
    cdef double[:, ::1] du = du_arr
    cdef double[:, ::1] db = db_arr
    cdef double braw, b, om, w, logw, wp
    for i in range(n):
        braw = beta[i, 0]
        b = braw if braw > BETA_FLOOR else BETA_FLOOR
        for j in range(k):
            om = 1.0 - u[i, j]
            w = om if om > W_FLOOR else W_FLOOR
            logw = log(w)
            wp = exp(logw / b)
            v[i, j] = 1.0 - wp
            du[i, j] = (1.0 / b) * wp / w if om > W_FLOOR else 0.0
            db[i, j] = wp * logw / (b * b) if braw > BETA_FLOOR else 0.0
    return v_arr, du_arr, db_arr


def stick_forward(const double[:, ::1] v):
    cdef Py_ssize_t n = v.shape[0], k = v.shape[1], i, j
    out = np.empty((n, k + 1))
    cdef double[:, ::1] s = out
    cdef double rem
    for i in range(n):
        rem = 1.0
        for j in range(k):
            s[i, j] = v[i, j] * rem
            rem = rem * (1.0 - v[i, j])
        s[i, k] = rem
    return out


def stick_backward(const double[:, ::1] v, const double[:, ::1] g):
    cdef Py_ssize_t n = v.shape[0], k = v.shape[1], i, j
    out = np.empty((n, k))
    cdef double[:, ::1] gv = out
    cdef double[::1] rem = np.empty(k + 1)
    cdef double grem
    for i in range(n):
        rem[0] = 1.0
        for j in range(k):
            rem[j + 1] = rem[j] * (1.0 - v[i, j])
        grem = g[i, k]
        for j in range(k - 1, -1, -1):
            gv[i, j] = rem[j] * (g[i, j] - grem)
            grem = g[i, j] * v[i, j] + grem * (1.0 - v[i, j])
    return out


cdef inline double _mag(double x, double p) nogil:
    if p == 1.0:
        return fabs(x)
    return pow(fabs(x), p)


cdef Py_ssize_t _live_rows(const double[:, ::1] s, double p):
    cdef Py_ssize_t i, j, count = 0
    cdef double norm
    for i in range(s.shape[0]):
        norm = 0.0
        for j in range(s.shape[1]):
            norm += _mag(s[i, j], p)
        if norm > 0.0:
            count += 1
    return count


def entropy_forward(const double[:, ::1] s, double p, double eps):
    cdef Py_ssize_t n = s.shape[0], k = s.shape[1], i, j
    cdef double norm, q, h, total = 0.0
    cdef Py_ssize_t count = 0
    for i in range(n):
        norm = 0.0
        for j in range(k):
            norm += _mag(s[i, j], p)
        if norm <= 0.0:
            continue
        h = 0.0
        for j in range(k):
            q = _mag(s[i, j], p) / norm
            h -= q * log(q if q > eps else eps)
        total += h
        count += 1
    if count == 0:
        return 0.0
    return total / count


def entropy_value_and_grad(const double[:, ::1] s, double p, double eps):
    cdef Py_ssize_t n = s.shape[0], k = s.shape[1], i, j
    out = np.zeros((n, k))
    cdef double[:, ::1] gs = out
    cdef double[::1] q = np.empty(k)
    cdef double[::1] gq = np.empty(k)
    cdef double norm, dot, x, da, lq, h, total = 0.0
    cdef Py_ssize_t count = _live_rows(s, p)
    if count == 0:
        return 0.0, out
    for i in range(n):
        norm = 0.0
        for j in range(k):
            norm += _mag(s[i, j], p)
        if norm <= 0.0:
            continue
        dot = 0.0
        h = 0.0
        for j in range(k):
            q[j] = _mag(s[i, j], p) / norm
            lq = log(q[j] if q[j] > eps else eps)
            h -= q[j] * lq
            gq[j] = -(lq + (1.0 if q[j] > eps else 0.0)) / count
            dot += gq[j] * q[j]
        total += h
        for j in range(k):
            x = s[i, j]
            if x == 0.0:
                da = 0.0
            elif p == 1.0:
                da = 1.0 if x > 0.0 else -1.0
            else:
                da = p * pow(fabs(x), p - 1.0) * (1.0 if x > 0.0 else -1.0)
            gs[i, j] = (gq[j] - dot) / norm * da
    return total / count, out


cdef inline double _row_cos(const double[:, ::1] a, const double[:, ::1] b, Py_ssize_t i,
                            double clamp, double* na, double* nb, int* inside) noexcept nogil:
    cdef Py_ssize_t j
    cdef double saa = 0.0, sbb = 0.0, sab = 0.0, c
    for j in range(a.shape[1]):
        saa += a[i, j] * a[i, j]
        sbb += b[i, j] * b[i, j]
        sab += a[i, j] * b[i, j]
    na[0] = sqrt(saa)
    nb[0] = sqrt(sbb)
    if na[0] < 1e-300:
        na[0] = 1e-300
    if nb[0] < 1e-300:
        nb[0] = 1e-300
    c = sab / (na[0] * nb[0])
    inside[0] = 1
    if c < -1.0 + clamp:
        c = -1.0 + clamp
        inside[0] = 0
    elif c > 1.0 - clamp:
        c = 1.0 - clamp
        inside[0] = 0
    return c


def angle_forward(const double[:, ::1] a, const double[:, ::1] b, double clamp):
    cdef Py_ssize_t n = a.shape[0], i
    cdef double na, nb, total = 0.0
    cdef int inside
    for i in range(n):
        total += acos(_row_cos(a, b, i, clamp, &na, &nb, &inside))
    return total / n


def angle_value_and_grad(const double[:, ::1] a, const double[:, ::1] b, double clamp):
    cdef Py_ssize_t n = a.shape[0], k = a.shape[1], i, j
    ga_arr = np.empty((n, k))
    gb_arr = np.empty((n, k))
    cdef double[:, ::1] ga = ga_arr
    cdef double[:, ::1] gb = gb_arr
    cdef double na, nb, c, d, total = 0.0
    cdef int inside
    for i in range(n):
        c = _row_cos(a, b, i, clamp, &na, &nb, &inside)
        total += acos(c)
        d = (-1.0 / sqrt(1.0 - c * c)) / n if inside else 0.0
        for j in range(k):
            ga[i, j] = d * (b[i, j] / (na * nb) - c * a[i, j] / (na * na))
            gb[i, j] = d * (a[i, j] / (na * nb) - c * b[i, j] / (nb * nb))
    return total / n, ga_arr, gb_arr
