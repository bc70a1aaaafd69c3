"""Pure-numpy time-stepping loop, used when the compiled kernel is unavailable.

The public ``advance`` takes ``(N, ncells)`` fields like the compiled one
and works on ``(N, nx, ny)`` views; one-dimensional grids use ``ny = 1``.
The floating-point operations follow the compiled loop in the same order.
"""
import numpy as np


def _trunc(u, M):
    return np.minimum(u, M)


def _seq_sum(x):
    return float(np.cumsum(x)[-1]) if x.size else 0.0


def _measure(u, a, m, rs, ihx, ihy, vol, M):
    n = u.shape[0]
    f = m.copy()
    for j in range(n):
        f -= a[:, j] * u[j]
    gx = (f[:, 1:, :] - f[:, :-1, :]) * ihx
    gy = (f[:, :, 1:] - f[:, :, :-1]) * ihy
    gmax = 0.0
    if gx.size:
        gmax = max(gmax, float(np.max(np.abs(gx) * ihx)))
    if gy.size:
        gmax = max(gmax, float(np.max(np.abs(gy) * ihy)))
    fneg = max(0.0, float(np.max(-f)))
    diffmax = max(0.0, float(np.max(_trunc(u, M) * rs)))  # rs broadcasts for constant a
    # cumsum adds left to right, matching the compiled accumulation order
    wx = 0.5 * (u[:, :-1, :] + u[:, 1:, :]) * gx * gx
    wy = 0.5 * (u[:, :, :-1] + u[:, :, 1:]) * gy * gy
    terms = np.concatenate([wx.reshape(n, -1), wy.reshape(n, -1)], axis=1).ravel()
    dface = _seq_sum(terms)
    dcell = _seq_sum((u * f * f).ravel())
    return f, gx, gy, gmax, fneg, diffmax, float((dface + dcell) * vol)


def _upwind(g, left, right, M):
    return g * np.where(g > 0, _trunc(left, M), _trunc(right, M))


def _update(u, f, gx, gy, ihx, ihy, dt, delta, M, patankar):
    Fx = _upwind(gx, u[:, :-1, :], u[:, 1:, :], M)
    Fy = _upwind(gy, u[:, :, :-1], u[:, :, 1:], M)
    if delta > 0:
        Fx = Fx - delta * ((u[:, 1:, :] - u[:, :-1, :]) * ihx)
        Fy = Fy - delta * ((u[:, :, 1:] - u[:, :, :-1]) * ihy)
    rhs = np.zeros_like(u)
    rhs[:, 1:, :] += Fx * ihx
    rhs[:, :-1, :] -= Fx * ihx
    rhs[:, :, 1:] += Fy * ihy
    rhs[:, :, :-1] -= Fy * ihy
    ut = _trunc(u, M)
    if not patankar:
        react = ut * f
        new = u + dt * (rhs + react)
    else:
        pos = np.where(f > 0, ut * f, 0.0)
        neg = np.where(f < 0, ut * -f, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(u > 0, neg / np.where(u > 0, u, 1.0), 0.0)
        new = (u + dt * (rhs + pos)) / (1.0 + dt * coef)
        react = pos - coef * new
    return new, react


def advance(u2, a3, m2, nx, ny, hx, hy, ndim, vol, t, t_end, n_steps, dt_fixed, cfl, delta,
            M, patankar, dt_cap, reaction_out=None):
    """Same contract as the compiled ``advance``."""
    n = u2.shape[0]
    u = u2.reshape(n, nx, ny)
    cells = (nx, ny) if a3.shape[2] > 1 else (1, 1)
    a = a3.reshape((n, n) + cells)
    m = m2.reshape(n, nx, ny)
    rs = np.abs(a).sum(axis=1)
    react_out = None if reaction_out is None else reaction_out.reshape(n, nx, ny)
    ihx = 1.0 / hx
    ihy = 1.0 / hy
    inv_h2 = ihx * ihx + (ihy * ihy if ndim == 2 else 0.0)
    faces = 2.0 * ndim
    dt = 0.0
    d_prev = 0.0
    d_int = 0.0
    k = 0
    status = 0
    while True:
        f, gx, gy, gmax, fneg, diffmax, D = _measure(u, a, m, rs, ihx, ihy, vol, M)
        if k > 0:
            d_int += 0.5 * dt * (d_prev + D)
        d_prev = D
        remaining = t_end - t
        if k >= n_steps or remaining <= 0.0:
            break
        s_pos = gmax * faces + fneg + 2.0 * delta * inv_h2
        if dt_fixed > 0:
            if dt_fixed * s_pos > 1.0 + 1e-12:
                status = 1
                break
            dt = dt_fixed
        else:
            s_auto = s_pos + 2.0 * diffmax * inv_h2
            dt = cfl / s_auto if s_auto > 0 else np.inf
            dt = min(dt, dt_cap)
        # absorb a round-off sliver into the final step
        clipped = dt * (1.0 + 1e-12) >= remaining
        if clipped:
            dt = remaining
        new, react = _update(u, f, gx, gy, ihx, ihy, dt, delta, M, patankar)
        if not np.all(np.isfinite(new)):
            status = 2
            break
        u[...] = new
        if react_out is not None:
            react_out[...] = react
        t = t_end if clipped else t + dt
        k += 1
    return status, t, k, d_int, d_prev, dt
