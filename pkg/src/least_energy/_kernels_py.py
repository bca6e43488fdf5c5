"""Pure-Python reference implementations of the hot loops.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
The compiled module is preferred at import time (see :mod:`least_energy.kernels`);
this one is the fallback and the reference the compiled code is tested against.
"""
import math

import numpy as np


def _power(u, p, floor):
    # odd extension sign(u)|u|^p, evaluated as exp(p log|u|) with a floor on log|u|
    if u > 0.0:
        lu = math.log(u)
        return math.exp(p * (lu if lu > floor else floor))
    if u < 0.0:
        lu = math.log(-u)
        return -math.exp(p * (lu if lu > floor else floor))
    return 0.0


def _hermite_zero(s0, ds, y0, y1, d0, d1):
    """First zero in [0, 1] of the cubic Hermite interpolant through (y0, d0), (y1, d1)."""
    # derivatives are per unit s; rescale to the unit interval
    m0 = d0 * ds
    m1 = d1 * ds
    lo, hi = 0.0, 1.0
    for _ in range(60):
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


def radial_integrate(p, lam, s0, ds, s_end, u0, v0, store):
    """RK4 for the radial problem in the logarithmic variable s = log r.

    State is (u, r u'); the system reads u_s = v, v_s = e^{2s} (lam u - u^p).
    Integration stops at the first zero of u or at ``s_end``.

    Returns ``(s_zero, v_zero, u_end, us, vs)``; ``s_zero`` is NaN when no zero
    was met, and ``us``/``vs`` are the stored states (empty unless ``store``).
    """
    floor = -700.0 / p
    n = int(math.ceil((s_end - s0) / ds))
    us = np.empty(n + 1 if store else 0)
    vs = np.empty(n + 1 if store else 0)
    u, v, s = u0, v0, s0
    if store:
        us[0] = u
        vs[0] = v
    for i in range(n):
        e = math.exp(2.0 * s)
        k1u = v
        k1v = e * (lam * u - _power(u, p, floor))
        sh = s + 0.5 * ds
        eh = math.exp(2.0 * sh)
        u2 = u + 0.5 * ds * k1u
        v2 = v + 0.5 * ds * k1v
        k2u = v2
        k2v = eh * (lam * u2 - _power(u2, p, floor))
        u3 = u + 0.5 * ds * k2u
        v3 = v + 0.5 * ds * k2v
        k3u = v3
        k3v = eh * (lam * u3 - _power(u3, p, floor))
        e1 = math.exp(2.0 * (s + ds))
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
                return sz, vz, un, us[: i + 2], vs[: i + 2]
            return sz, vz, un, us, vs
        u, v, s = un, vn, s + ds
        if store:
            us[i + 1] = u
            vs[i + 1] = v
    return math.nan, math.nan, u, us, vs


def mode_rk4(k, r0, psi0, dpsi0, h, n):
    """RK4 for -psi'' - psi'/r + k^2 psi/r^2 = (1 + r^2/8)^{-2} psi on r0 + i h."""
    k2 = float(k * k)
    psi = np.empty(n + 1)
    dpsi = np.empty(n + 1)
    y, z, r = psi0, dpsi0, r0
    psi[0] = y
    dpsi[0] = z

    def acc(r, y, z):
        w = 1.0 + r * r / 8.0
        return -z / r + (k2 / (r * r) - 1.0 / (w * w)) * y

    for i in range(n):
        k1y = z
        k1z = acc(r, y, z)
        k2y = z + 0.5 * h * k1z
        k2z = acc(r + 0.5 * h, y + 0.5 * h * k1y, z + 0.5 * h * k1z)
        k3y = z + 0.5 * h * k2z
        k3z = acc(r + 0.5 * h, y + 0.5 * h * k2y, z + 0.5 * h * k2z)
        k4y = z + h * k3z
        k4z = acc(r + h, y + h * k3y, z + h * k3z)
        y += h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        z += h / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
        r = r0 + (i + 1) * h
        psi[i + 1] = y
        dpsi[i + 1] = z
    return psi, dpsi


def p1_local(vertices, triangles):
    """Signed areas and local P1 stiffness matrices, one per triangle."""
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    m = triangles.shape[0]
    areas = np.empty(m)
    local = np.empty((m, 3, 3))
    for t in range(m):
        i, j, k = triangles[t]
        x0, y0 = vertices[i]
        x1, y1 = vertices[j]
        x2, y2 = vertices[k]
        # edge vectors opposite each vertex, rotated
        b0, c0 = y1 - y2, x2 - x1
        b1, c1 = y2 - y0, x0 - x2
        b2, c2 = y0 - y1, x1 - x0
        area = 0.5 * (c2 * b1 - c1 * b2)
        areas[t] = area
        bs = (b0, b1, b2)
        cs = (c0, c1, c2)
        scale = 0.25 / abs(area) if area != 0.0 else 0.0
        for a in range(3):
            for b in range(3):
                local[t, a, b] = scale * (bs[a] * bs[b] + cs[a] * cs[b])
    return areas, local


def prufer_sweep(k2, mu, theta0, W, E, G, h, q_cut):
    """Prüfer angle of (psi, z) across a uniform s-grid.

    Integrates psi_s = z, z_s = Q psi - G z with Q = k2 + W - mu E, where W, E
    and G are sampled on a grid of spacing h/2 (RK4 midpoints fall on odd
    nodes). With tan(theta) = psi/z the angle obeys
    theta_s = cos^2 - Q sin^2 + G sin cos, and it passes every multiple of pi
    upward. Integration stops early once Q exceeds ``q_cut``: from there on
    the solution is non-oscillatory. Returns ``(theta_end, index_reached)``.
    """
    n = (len(W) - 1) // 2
    th = theta0
    for i in range(n):
        j = 2 * i
        q0 = k2 + W[j] - mu * E[j]
        if q0 > q_cut:
            return th, j
        q1 = k2 + W[j + 1] - mu * E[j + 1]
        q2 = k2 + W[j + 2] - mu * E[j + 2]
        g0 = G[j]
        g1 = G[j + 1]
        g2 = G[j + 2]
        c = math.cos(th)
        s = math.sin(th)
        a1 = c * c - q0 * s * s + g0 * s * c
        t = th + 0.5 * h * a1
        c = math.cos(t)
        s = math.sin(t)
        a2 = c * c - q1 * s * s + g1 * s * c
        t = th + 0.5 * h * a2
        c = math.cos(t)
        s = math.sin(t)
        a3 = c * c - q1 * s * s + g1 * s * c
        t = th + h * a3
        c = math.cos(t)
        s = math.sin(t)
        a4 = c * c - q2 * s * s + g2 * s * c
        th += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    return th, 2 * n


def linear_sweep(k2, mu, y0, z0, W, E, G, h):
    """RK4 for psi_s = z, z_s = (k2 + W - mu E) psi - G z on the ``prufer_sweep`` grid.

    Returns psi and z at the even nodes.
    """
    n = (len(W) - 1) // 2
    ys = np.empty(n + 1)
    zs = np.empty(n + 1)
    y, z = y0, z0
    ys[0] = y
    zs[0] = z
    for i in range(n):
        j = 2 * i
        q0 = k2 + W[j] - mu * E[j]
        q1 = k2 + W[j + 1] - mu * E[j + 1]
        q2 = k2 + W[j + 2] - mu * E[j + 2]
        g0 = G[j]
        g1 = G[j + 1]
        g2 = G[j + 2]
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
    return ys, zs
