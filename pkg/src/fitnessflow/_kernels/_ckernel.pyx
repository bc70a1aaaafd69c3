# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled time-stepping loop.  Mirrors ``_pykernel.advance`` operation by operation.

Fields are ``(N, ncells)`` with row-major cells: the x-neighbour of cell
``c`` is ``c + ny`` and the y-neighbour ``c + 1``.
"""
import numpy as np

from libc.math cimport fabs, isfinite, INFINITY


cdef struct Measure:
    double gmax      # max over faces of |grad f| / h
    double fneg      # max over cells of the negative part of f
    double diffmax   # max over cells of u~_i * sum_j |a_ij|
    double D         # dissipation, face densities by arithmetic mean


cdef inline double _trunc(double v, double M) noexcept nogil:
    return v if v < M else M


cdef Measure _measure(double[:, ::1] u, const double[:, :, ::1] a, bint const_a,
                      const double[:, ::1] m, const double[:, ::1] rs,
                      double[:, ::1] f, double[:, ::1] gx, double[:, ::1] gy,
                      Py_ssize_t nx, Py_ssize_t ny, double ihx, double ihy,
                      double vol, double M) noexcept nogil:
    cdef Py_ssize_t n = u.shape[0], nc = u.shape[1]
    cdef Py_ssize_t i, j, c, ix, iy, ca
    cdef double s, g, ut, dface = 0.0, dcell = 0.0
    cdef Measure r
    r.gmax = 0.0
    r.fneg = 0.0
    r.diffmax = 0.0
    for i in range(n):
        for c in range(nc):
            ca = 0 if const_a else c
            s = m[i, c]
            for j in range(n):
                s -= a[i, j, ca] * u[j, c]
            f[i, c] = s
            if -s > r.fneg:
                r.fneg = -s
            ut = _trunc(u[i, c], M) * rs[i, ca]
            if ut > r.diffmax:
                r.diffmax = ut
            dcell += u[i, c] * s * s
    for i in range(n):
        for c in range(nc - ny):
            g = (f[i, c + ny] - f[i, c]) * ihx
            gx[i, c] = g
            if fabs(g) * ihx > r.gmax:
                r.gmax = fabs(g) * ihx
            dface += 0.5 * (u[i, c] + u[i, c + ny]) * g * g
        if ny > 1:
            for ix in range(nx):
                for iy in range(ny - 1):
                    c = ix * ny + iy
                    g = (f[i, c + 1] - f[i, c]) * ihy
                    gy[i, c] = g
                    if fabs(g) * ihy > r.gmax:
                        r.gmax = fabs(g) * ihy
                    dface += 0.5 * (u[i, c] + u[i, c + 1]) * g * g
    r.D = (dface + dcell) * vol
    return r


cdef int _update(double[:, ::1] u, double[:, ::1] f, double[:, ::1] gx,
                 double[:, ::1] gy, double[:, ::1] rhs, double[:, ::1] react,
                 bint store, Py_ssize_t nx, Py_ssize_t ny, double ihx, double ihy,
                 double dt, double delta, double M, bint patankar) noexcept nogil:
    cdef Py_ssize_t n = u.shape[0], nc = u.shape[1]
    cdef Py_ssize_t i, c, ix, iy
    cdef double g, F, ut, fi, pos, neg, v, coef
    for i in range(n):
        for c in range(nc):
            rhs[i, c] = 0.0
        for c in range(nc - ny):
            g = gx[i, c]
            if g > 0:
                F = g * _trunc(u[i, c], M)
            else:
                F = g * _trunc(u[i, c + ny], M)
            if delta > 0:
                F = F - delta * ((u[i, c + ny] - u[i, c]) * ihx)
            rhs[i, c + ny] += F * ihx
            rhs[i, c] -= F * ihx
        if ny > 1:
            for ix in range(nx):
                for iy in range(ny - 1):
                    c = ix * ny + iy
                    g = gy[i, c]
                    if g > 0:
                        F = g * _trunc(u[i, c], M)
                    else:
                        F = g * _trunc(u[i, c + 1], M)
                    if delta > 0:
                        F = F - delta * ((u[i, c + 1] - u[i, c]) * ihy)
                    rhs[i, c + 1] += F * ihy
                    rhs[i, c] -= F * ihy
    for i in range(n):
        for c in range(nc):
            v = u[i, c]
            ut = _trunc(v, M)
            fi = f[i, c]
            if not patankar:
                F = ut * fi
                v = v + dt * (rhs[i, c] + F)
            else:
                pos = ut * fi if fi > 0 else 0.0
                neg = ut * (-fi) if fi < 0 else 0.0
                coef = neg / v if v > 0 else 0.0
                v = (v + dt * (rhs[i, c] + pos)) / (1.0 + dt * coef)
                F = pos - coef * v
            if not isfinite(v):
                return 2
            if store:
                react[i, c] = F
            u[i, c] = v
    return 0


def advance(double[:, ::1] u, const double[:, :, ::1] a, const double[:, ::1] m,
            Py_ssize_t nx, Py_ssize_t ny, double hx, double hy, int ndim, double vol,
            double t, double t_end, long n_steps, double dt_fixed, double cfl,
            double delta, double M, bint patankar, double dt_cap, reaction_out=None):
    """Advance ``u`` in place by at most ``n_steps`` steps, stopping at ``t_end``.

    ``a`` is ``(N, N, 1)`` for a constant matrix or ``(N, N, ncells)``.
    Returns ``(status, t, steps, d_integral, d_end, last_dt)``; status is 0 on
    success, 1 when a fixed ``dt`` exceeds the positivity bound and 2 on a
    non-finite update.
    """
    cdef Py_ssize_t n = u.shape[0], nc = u.shape[1]
    cdef bint const_a = a.shape[2] == 1
    cdef double[:, ::1] rs = np.abs(np.asarray(a)).sum(axis=1)
    cdef double[:, ::1] f = np.empty((n, nc))
    cdef double[:, ::1] gx = np.empty((n, nc))
    cdef double[:, ::1] gy = np.empty((n, nc))
    cdef double[:, ::1] rhs = np.empty((n, nc))
    cdef double[:, ::1] react
    cdef bint store = reaction_out is not None
    if store:
        react = reaction_out
    else:
        react = rhs
    cdef double ihx = 1.0 / hx, ihy = 1.0 / hy
    cdef double inv_h2 = ihx * ihx + (ihy * ihy if ndim == 2 else 0.0)
    cdef double faces = 2.0 * ndim
    cdef double s_pos, s_auto, dt = 0.0, d_prev = 0.0, d_int = 0.0, remaining
    cdef long k = 0
    cdef int status = 0
    cdef Measure r
    with nogil:
        while True:
            r = _measure(u, a, const_a, m, rs, f, gx, gy, nx, ny, ihx, ihy, vol, M)
            if k > 0:
                d_int += 0.5 * dt * (d_prev + r.D)
            d_prev = r.D
            remaining = t_end - t
            if k >= n_steps or remaining <= 0.0:
                break
            s_pos = r.gmax * faces + r.fneg + 2.0 * delta * inv_h2
            if dt_fixed > 0:
                if dt_fixed * s_pos > 1.0 + 1e-12:
                    status = 1
                    break
                dt = dt_fixed
            else:
                s_auto = s_pos + 2.0 * r.diffmax * inv_h2
                dt = cfl / s_auto if s_auto > 0 else INFINITY
                if dt > dt_cap:
                    dt = dt_cap
            # absorb a round-off sliver into the final step
            if dt * (1.0 + 1e-12) >= remaining:
                dt = remaining
                status = _update(u, f, gx, gy, rhs, react, store, nx, ny, ihx, ihy,
                                 dt, delta, M, patankar)
                t = t_end
            else:
                status = _update(u, f, gx, gy, rhs, react, store, nx, ny, ihx, ihy,
                                 dt, delta, M, patankar)
                t = t + dt
            if status != 0:
                break
            k += 1
    return status, t, k, d_int, d_prev, dt
