# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the loops in ``_kernels_py``; same signatures, same results."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, ceil, fabs, cos, sin, NAN

cnp.import_array()


cdef inline double _power(double u, double p, double floor) noexcept nogil:
    cdef double lu
    if u > 0.0:
        lu = log(u)
        return exp(p * (lu if lu > floor else floor))
    if u < 0.0:
        lu = log(-u)
        return -exp(p * (lu if lu > floor else floor))
    return 0.0


cdef double _hermite_zero(double s0, double ds, double y0, double y1,
                          double d0, double d1) noexcept nogil:
    cdef double m0 = d0 * ds, m1 = d1 * ds
    cdef double lo = 0.0, hi = 1.0, t, t2, t3, val
    cdef int it
    for it in range(60):
        t = 0.5 * (lo + hi)
        t2 = t * t
        t3 = t2 * t
        val = ((2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + t) * m0
               + (-2 * t3 + 3 * t2) * y1 + (t3 - t2) * m1)
        if val > 0.0:
            lo = t
        else:
            hi = t
    t = 0.5 * (lo + hi)
    return s0 + t * ds


def radial_integrate(double p, double lam, double s0, double ds, double s_end,
                     double u0, double v0, bint store):
    cdef double floor = -700.0 / p
    cdef Py_ssize_t n = <Py_ssize_t>ceil((s_end - s0) / ds)
    cdef Py_ssize_t m = n + 1 if store else 0
    us_arr = np.empty(m)
    vs_arr = np.empty(m)
    cdef double[::1] us = us_arr
    cdef double[::1] vs = vs_arr
    cdef double u = u0, v = v0, s = s0
    cdef double e, eh, e1, u2, v2, u3, v3, u4, v4, un, vn
    cdef double k1u, k1v, k2u, k2v, k3u, k3v, k4u, k4v, sz, t, vz
    cdef Py_ssize_t i
    if store:
        us[0] = u
        vs[0] = v
    for i in range(n):
        e = exp(2.0 * s)
        k1u = v
        k1v = e * (lam * u - _power(u, p, floor))
        eh = exp(2.0 * (s + 0.5 * ds))
        u2 = u + 0.5 * ds * k1u
        v2 = v + 0.5 * ds * k1v
        k2u = v2
        k2v = eh * (lam * u2 - _power(u2, p, floor))
        u3 = u + 0.5 * ds * k2u
        v3 = v + 0.5 * ds * k2v
        k3u = v3
        k3v = eh * (lam * u3 - _power(u3, p, floor))
        e1 = exp(2.0 * (s + ds))
        u4 = u + ds * k3u
        v4 = v + ds * k3v
        k4u = v4
        k4v = e1 * (lam * u4 - _power(u4, p, floor))
        un = u + ds / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
        vn = v + ds / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        if un <= 0.0:
            sz = _hermite_zero(s, ds, u, un, v, vn)
            t = (sz - s) / ds
            vz = v + t * (vn - v)
            if store:
                us[i + 1] = un
                vs[i + 1] = vn
                return sz, vz, un, us_arr[: i + 2], vs_arr[: i + 2]
            return sz, vz, un, us_arr, vs_arr
        u = un
        v = vn
        s = s + ds
        if store:
            us[i + 1] = u
            vs[i + 1] = v
    return NAN, NAN, u, us_arr, vs_arr


cdef inline double _acc(double k2, double r, double y, double z) noexcept nogil:
    cdef double w = 1.0 + r * r / 8.0
    return -z / r + (k2 / (r * r) - 1.0 / (w * w)) * y


def mode_rk4(int k, double r0, double psi0, double dpsi0, double h, Py_ssize_t n):
    cdef double k2 = <double>(k * k)
    psi_arr = np.empty(n + 1)
    dpsi_arr = np.empty(n + 1)
    cdef double[::1] psi = psi_arr
    cdef double[::1] dpsi = dpsi_arr
    cdef double y = psi0, z = dpsi0, r = r0
    cdef double k1y, k1z, k2y, k2z, k3y, k3z, k4y, k4z
    cdef Py_ssize_t i
    psi[0] = y
    dpsi[0] = z
    for i in range(n):
        k1y = z
        k1z = _acc(k2, r, y, z)
        k2y = z + 0.5 * h * k1z
        k2z = _acc(k2, r + 0.5 * h, y + 0.5 * h * k1y, z + 0.5 * h * k1z)
        k3y = z + 0.5 * h * k2z
        k3z = _acc(k2, r + 0.5 * h, y + 0.5 * h * k2y, z + 0.5 * h * k2z)
        k4y = z + h * k3z
        k4z = _acc(k2, r + h, y + h * k3y, z + h * k3z)
        y += h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        z += h / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
        r = r0 + (i + 1) * h
        psi[i + 1] = y
        dpsi[i + 1] = z
    return psi_arr, dpsi_arr


def p1_local(vertices, triangles):
    cdef double[:, ::1] xy = np.ascontiguousarray(vertices, dtype=np.float64)
    cdef long long[:, ::1] tri = np.ascontiguousarray(triangles, dtype=np.int64)
    cdef Py_ssize_t m = tri.shape[0]
    areas_arr = np.empty(m)
    local_arr = np.empty((m, 3, 3))
    cdef double[::1] areas = areas_arr
    cdef double[:, :, ::1] local = local_arr
    cdef double bs[3]
    cdef double cs[3]
    cdef double x0, y0, x1, y1, x2, y2, area, scale
    cdef Py_ssize_t t, a, b
    for t in range(m):
        x0 = xy[tri[t, 0], 0]
        y0 = xy[tri[t, 0], 1]
        x1 = xy[tri[t, 1], 0]
        y1 = xy[tri[t, 1], 1]
        x2 = xy[tri[t, 2], 0]
        y2 = xy[tri[t, 2], 1]
        bs[0] = y1 - y2
        cs[0] = x2 - x1
        bs[1] = y2 - y0
        cs[1] = x0 - x2
        bs[2] = y0 - y1
        cs[2] = x1 - x0
        area = 0.5 * (cs[2] * bs[1] - cs[1] * bs[2])
        areas[t] = area
        scale = 0.25 / fabs(area) if area != 0.0 else 0.0
        for a in range(3):
            for b in range(3):
                local[t, a, b] = scale * (bs[a] * bs[b] + cs[a] * cs[b])
    return areas_arr, local_arr


def prufer_sweep(double k2, double mu, double theta0, W, E, G, double h, double q_cut):
    cdef double[::1] w = np.ascontiguousarray(W, dtype=np.float64)
    cdef double[::1] e = np.ascontiguousarray(E, dtype=np.float64)
    cdef double[::1] g = np.ascontiguousarray(G, dtype=np.float64)
    cdef Py_ssize_t n = (w.shape[0] - 1) // 2
    cdef double th = theta0, q0, q1, q2, g0, g1, g2, c, s, t, a1, a2, a3, a4
    cdef Py_ssize_t i, j
    for i in range(n):
        j = 2 * i
        q0 = k2 + w[j] - mu * e[j]
        if q0 > q_cut:
            return th, j
        q1 = k2 + w[j + 1] - mu * e[j + 1]
        q2 = k2 + w[j + 2] - mu * e[j + 2]
        g0 = g[j]
        g1 = g[j + 1]
        g2 = g[j + 2]
        c = cos(th)
        s = sin(th)
        a1 = c * c - q0 * s * s + g0 * s * c
        t = th + 0.5 * h * a1
        c = cos(t)
        s = sin(t)
        a2 = c * c - q1 * s * s + g1 * s * c
        t = th + 0.5 * h * a2
        c = cos(t)
        s = sin(t)
        a3 = c * c - q1 * s * s + g1 * s * c
        t = th + h * a3
        c = cos(t)
        s = sin(t)
        a4 = c * c - q2 * s * s + g2 * s * c
        th += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    return th, 2 * n


def linear_sweep(double k2, double mu, double y0, double z0, W, E, G, double h):
    cdef double[::1] w = np.ascontiguousarray(W, dtype=np.float64)
    cdef double[::1] e = np.ascontiguousarray(E, dtype=np.float64)
    cdef double[::1] g = np.ascontiguousarray(G, dtype=np.float64)
    cdef Py_ssize_t n = (w.shape[0] - 1) // 2
    ys_arr = np.empty(n + 1)
    zs_arr = np.empty(n + 1)
    cdef double[::1] ys = ys_arr
    cdef double[::1] zs = zs_arr
    cdef double y = y0, z = z0, q0, q1, q2, g0, g1, g2
    cdef double k1y, k1z, k2y, k2z, k3y, k3z, k4y, k4z
    cdef Py_ssize_t i, j
    ys[0] = y
    zs[0] = z
    for i in range(n):
        j = 2 * i
        q0 = k2 + w[j] - mu * e[j]
        q1 = k2 + w[j + 1] - mu * e[j + 1]
        q2 = k2 + w[j + 2] - mu * e[j + 2]
        g0 = g[j]
        g1 = g[j + 1]
        g2 = g[j + 2]
        k1y = z
        k1z = q0 * y - g0 * z
        k2y = z + 0.5 * h * k1z
        k2z = q1 * (y + 0.5 * h * k1y) - g1 * k2y
        k3y = z + 0.5 * h * k2z
        k3z = q1 * (y + 0.5 * h * k2y) - g1 * k3y
        k4y = z + h * k3z
        k4z = q2 * (y + h * k3y) - g2 * k4y
        y += h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        z += h / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
        ys[i + 1] = y
        zs[i + 1] = z
    return ys_arr, zs_arr
