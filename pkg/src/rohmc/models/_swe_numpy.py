"""Pure-numpy shallow-water kernels.

Fields are stored as ``w[var, i, j]`` with ``var`` in (u, v, phi), ``i``
the periodic x index and ``j`` the bounded y index.  Derivatives are
second-order centered; the tendency is zero on the two boundary rows,
which are instead set by the boundary projection after every step.
"""

import numpy as np

FAIL_NONE = -1
CODE_OK = 0
CODE_NONFINITE = 1
CODE_NONPHYSICAL = 2


def _dx(a, cx):
    return (np.roll(a, -1, axis=0) - np.roll(a, 1, axis=0)) * cx


def _dy(a, cy):
    out = np.zeros_like(a)
    out[:, 1:-1] = (a[:, 2:] - a[:, :-2]) * cy
    return out


def _dx_t(s, cx):
    return -_dx(s, cx)


def _dy_t(s, cy):
    # transpose of _dy; s must already vanish on the boundary rows
    out = np.zeros_like(s)
    out[:, 1:] += s[:, :-1] * cy
    out[:, :-1] -= s[:, 1:] * cy
    return out


def _interior(a):
    a[..., 0] = 0.0
    a[..., -1] = 0.0
    return a


def rhs(w, dx, dy, f):
    """Tendency ``A(w) w_x + B(w) w_y + C(y) w``."""
    cx, cy = 0.5 / dx, 0.5 / dy
    u, v, p = w
    ux, uy = _dx(u, cx), _dy(u, cy)
    vx, vy = _dx(v, cx), _dy(v, cy)
    px, py = _dx(p, cx), _dy(p, cy)
    out = np.empty_like(w)
    out[0] = -u * ux - 0.5 * p * px - v * uy + f * v
    out[1] = -u * vx - v * vy - 0.5 * p * py - f * u
    out[2] = -0.5 * p * ux - u * px - 0.5 * p * vy - v * py
    return _interior(out)


def rhs_jvp(w, dw, dx, dy, f):
    """Directional derivative of :func:`rhs` at ``w`` along ``dw``."""
    cx, cy = 0.5 / dx, 0.5 / dy
    u, v, p = w
    du, dv, dp = dw
    ux, uy = _dx(u, cx), _dy(u, cy)
    vx, vy = _dx(v, cx), _dy(v, cy)
    px, py = _dx(p, cx), _dy(p, cy)
    dux, duy = _dx(du, cx), _dy(du, cy)
    dvx, dvy = _dx(dv, cx), _dy(dv, cy)
    dpx, dpy = _dx(dp, cx), _dy(dp, cy)
    out = np.empty_like(w)
    out[0] = (-du * ux - u * dux - 0.5 * (dp * px + p * dpx)
              - dv * uy - v * duy + f * dv)
    out[1] = (-du * vx - u * dvx - dv * vy - v * dvy
              - 0.5 * (dp * py + p * dpy) - f * du)
    out[2] = (-0.5 * (dp * ux + p * dux) - du * px - u * dpx
              - 0.5 * (dp * vy + p * dvy) - dv * py - v * dpy)
    return _interior(out)


def rhs_vjp(w, r, dx, dy, f):
    """Transpose of :func:`rhs_jvp` applied to cotangent ``r``."""
    cx, cy = 0.5 / dx, 0.5 / dy
    u, v, p = w
    ru, rv, rp = _interior(np.array(r, dtype=np.float64, copy=True))
    ux, uy = _dx(u, cx), _dy(u, cy)
    vx, vy = _dx(v, cx), _dy(v, cy)
    px, py = _dx(p, cx), _dy(p, cy)
    g = np.empty_like(w)
    g[0] = (-ux * ru - (vx + f) * rv - px * rp
            + _dx_t(-u * ru - 0.5 * p * rp, cx) + _dy_t(-v * ru, cy))
    g[1] = ((f - uy) * ru - vy * rv - py * rp
            + _dx_t(-u * rv, cx) + _dy_t(-v * rv - 0.5 * p * rp, cy))
    g[2] = (-0.5 * px * ru - 0.5 * py * rv - 0.5 * (ux + vy) * rp
            + _dx_t(-0.5 * p * ru - u * rp, cx) + _dy_t(-0.5 * p * rv - v * rp, cy))
    return g


def apply_bc(w):
    """Wall conditions in y: ``v = 0``, zero normal gradient for u and phi."""
    w = w.copy()
    w[1, :, 0] = 0.0
    w[1, :, -1] = 0.0
    for k in (0, 2):
        w[k, :, 0] = w[k, :, 1]
        w[k, :, -1] = w[k, :, -2]
    return w


def apply_bc_adjoint(lam):
    lam = lam.copy()
    lam[1, :, 0] = 0.0
    lam[1, :, -1] = 0.0
    for k in (0, 2):
        lam[k, :, 1] += lam[k, :, 0]
        lam[k, :, 0] = 0.0
        lam[k, :, -2] += lam[k, :, -1]
        lam[k, :, -1] = 0.0
    return lam


def _status(w):
    if not np.all(np.isfinite(w)):
        return CODE_NONFINITE
    if np.min(w[2]) <= 0.0:
        return CODE_NONPHYSICAL
    return CODE_OK


def rk4_step(w, dt, dx, dy, f):
    a = 0.5 * dt
    k1 = rhs(w, dx, dy, f)
    k2 = rhs(w + a * k1, dx, dy, f)
    k3 = rhs(w + a * k2, dx, dy, f)
    k4 = rhs(w + dt * k3, dx, dy, f)
    return apply_bc(w + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


def rk4_step_jvp(w, dw, dt, dx, dy, f):
    a = 0.5 * dt
    k1 = rhs(w, dx, dy, f)
    w2 = w + a * k1
    k2 = rhs(w2, dx, dy, f)
    w3 = w + a * k2
    k3 = rhs(w3, dx, dy, f)
    w4 = w + dt * k3
    k4 = rhs(w4, dx, dy, f)
    d1 = rhs_jvp(w, dw, dx, dy, f)
    d2 = rhs_jvp(w2, dw + a * d1, dx, dy, f)
    d3 = rhs_jvp(w3, dw + a * d2, dx, dy, f)
    d4 = rhs_jvp(w4, dw + dt * d3, dx, dy, f)
    wn = apply_bc(w + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
    dwn = apply_bc(dw + (dt / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4))
    return wn, dwn


def rk4_step_vjp(w, lam, dt, dx, dy, f):
    a = 0.5 * dt
    k1 = rhs(w, dx, dy, f)
    w2 = w + a * k1
    k2 = rhs(w2, dx, dy, f)
    w3 = w + a * k2
    k3 = rhs(w3, dx, dy, f)
    w4 = w + dt * k3
    lp = apply_bc_adjoint(lam)
    g4 = rhs_vjp(w4, (dt / 6.0) * lp, dx, dy, f)
    g3 = rhs_vjp(w3, (dt / 3.0) * lp + dt * g4, dx, dy, f)
    g2 = rhs_vjp(w2, (dt / 3.0) * lp + a * g3, dx, dy, f)
    g1 = rhs_vjp(w, (dt / 6.0) * lp + a * g2, dx, dy, f)
    return lp + g1 + g2 + g3 + g4


def forward(w0, n, dt, dx, dy, f):
    """Integrate ``n`` steps, returning ``(traj, fail_step, code)``.

    ``traj`` has shape ``(n + 1,) + w0.shape``.  On failure ``fail_step``
    is the 1-based step that produced the bad state; otherwise -1.
    """
    traj = np.empty((n + 1,) + w0.shape)
    traj[0] = w0
    for s in range(n):
        traj[s + 1] = rk4_step(traj[s], dt, dx, dy, f)
        code = _status(traj[s + 1])
        if code:
            return traj, s + 1, code
    return traj, FAIL_NONE, CODE_OK


def tangent(w0, dw0, n, dt, dx, dy, f):
    w, dw = w0.copy(), dw0.copy()
    for s in range(n):
        w, dw = rk4_step_jvp(w, dw, dt, dx, dy, f)
        code = _status(w)
        if code:
            return w, dw, s + 1, code
    return w, dw, FAIL_NONE, CODE_OK


def adjoint(traj, lam, dt, dx, dy, f):
    """Backward sweep over a stored forward trajectory."""
    lam = lam.copy()
    for s in range(traj.shape[0] - 2, -1, -1):
        lam = rk4_step_vjp(traj[s], lam, dt, dx, dy, f)
    return lam
