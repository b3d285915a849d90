"""Loop-based shallow-water kernels compiled with numba.

Same layout and conventions as :mod:`._swe_numpy`.  Whole multi-step
sweeps run inside compiled code; the adjoint is written as the scatter
form of the forward stencil so it shares no code with the numpy path.
"""

import numpy as np

from .._accel import njit
from ._swe_numpy import CODE_NONFINITE, CODE_NONPHYSICAL, CODE_OK, FAIL_NONE

_OPTS = dict(cache=True, fastmath=False, nogil=True)


@njit(**_OPTS)
def rhs_into(w, dx, dy, f, out):
    nx, ny = w.shape[1], w.shape[2]
    cx, cy = 0.5 / dx, 0.5 / dy
    for i in range(nx):
        ip = i + 1 if i + 1 < nx else 0
        im = i - 1 if i > 0 else nx - 1
        out[0, i, 0] = 0.0
        out[1, i, 0] = 0.0
        out[2, i, 0] = 0.0
        out[0, i, ny - 1] = 0.0
        out[1, i, ny - 1] = 0.0
        out[2, i, ny - 1] = 0.0
        for j in range(1, ny - 1):
            U = w[0, i, j]
            V = w[1, i, j]
            P = w[2, i, j]
            F = f[j]
            ux = (w[0, ip, j] - w[0, im, j]) * cx
            uy = (w[0, i, j + 1] - w[0, i, j - 1]) * cy
            vx = (w[1, ip, j] - w[1, im, j]) * cx
            vy = (w[1, i, j + 1] - w[1, i, j - 1]) * cy
            px = (w[2, ip, j] - w[2, im, j]) * cx
            py = (w[2, i, j + 1] - w[2, i, j - 1]) * cy
            out[0, i, j] = -U * ux - 0.5 * P * px - V * uy + F * V
            out[1, i, j] = -U * vx - V * vy - 0.5 * P * py - F * U
            out[2, i, j] = -0.5 * P * ux - U * px - 0.5 * P * vy - V * py


@njit(**_OPTS)
def rhs_jvp_into(w, d, dx, dy, f, out):
    nx, ny = w.shape[1], w.shape[2]
    cx, cy = 0.5 / dx, 0.5 / dy
    for i in range(nx):
        ip = i + 1 if i + 1 < nx else 0
        im = i - 1 if i > 0 else nx - 1
        for k in range(3):
            out[k, i, 0] = 0.0
            out[k, i, ny - 1] = 0.0
        for j in range(1, ny - 1):
            U = w[0, i, j]
            V = w[1, i, j]
            P = w[2, i, j]
            dU = d[0, i, j]
            dV = d[1, i, j]
            dP = d[2, i, j]
            F = f[j]
            ux = (w[0, ip, j] - w[0, im, j]) * cx
            uy = (w[0, i, j + 1] - w[0, i, j - 1]) * cy
            vx = (w[1, ip, j] - w[1, im, j]) * cx
            vy = (w[1, i, j + 1] - w[1, i, j - 1]) * cy
            px = (w[2, ip, j] - w[2, im, j]) * cx
            py = (w[2, i, j + 1] - w[2, i, j - 1]) * cy
            dux = (d[0, ip, j] - d[0, im, j]) * cx
            duy = (d[0, i, j + 1] - d[0, i, j - 1]) * cy
            dvx = (d[1, ip, j] - d[1, im, j]) * cx
            dvy = (d[1, i, j + 1] - d[1, i, j - 1]) * cy
            dpx = (d[2, ip, j] - d[2, im, j]) * cx
            dpy = (d[2, i, j + 1] - d[2, i, j - 1]) * cy
            out[0, i, j] = (-dU * ux - U * dux - 0.5 * (dP * px + P * dpx)
                            - dV * uy - V * duy + F * dV)
            out[1, i, j] = (-dU * vx - U * dvx - dV * vy - V * dvy
                            - 0.5 * (dP * py + P * dpy) - F * dU)
            out[2, i, j] = (-0.5 * (dP * ux + P * dux) - dU * px - U * dpx
                            - 0.5 * (dP * vy + P * dvy) - dV * py - V * dpy)


@njit(**_OPTS)
def rhs_vjp_into(w, r, dx, dy, f, g):
    nx, ny = w.shape[1], w.shape[2]
    cx, cy = 0.5 / dx, 0.5 / dy
    g[:] = 0.0
    for i in range(nx):
        ip = i + 1 if i + 1 < nx else 0
        im = i - 1 if i > 0 else nx - 1
        for j in range(1, ny - 1):
            U = w[0, i, j]
            V = w[1, i, j]
            P = w[2, i, j]
            F = f[j]
            a = r[0, i, j]
            b = r[1, i, j]
            c = r[2, i, j]
            ux = (w[0, ip, j] - w[0, im, j]) * cx
            uy = (w[0, i, j + 1] - w[0, i, j - 1]) * cy
            vx = (w[1, ip, j] - w[1, im, j]) * cx
            vy = (w[1, i, j + 1] - w[1, i, j - 1]) * cy
            px = (w[2, ip, j] - w[2, im, j]) * cx
            py = (w[2, i, j + 1] - w[2, i, j - 1]) * cy
            # pointwise coefficients
            g[0, i, j] += -ux * a - (vx + F) * b - px * c
            g[1, i, j] += (F - uy) * a - vy * b - py * c
            g[2, i, j] += -0.5 * px * a - 0.5 * py * b - 0.5 * (ux + vy) * c
            # stencil scatter
            s = (-U * a - 0.5 * P * c) * cx
            g[0, ip, j] += s
            g[0, im, j] -= s
            s = (-V * a) * cy
            g[0, i, j + 1] += s
            g[0, i, j - 1] -= s
            s = (-U * b) * cx
            g[1, ip, j] += s
            g[1, im, j] -= s
            s = (-V * b - 0.5 * P * c) * cy
            g[1, i, j + 1] += s
            g[1, i, j - 1] -= s
            s = (-0.5 * P * a - U * c) * cx
            g[2, ip, j] += s
            g[2, im, j] -= s
            s = (-0.5 * P * b - V * c) * cy
            g[2, i, j + 1] += s
            g[2, i, j - 1] -= s


@njit(**_OPTS)
def bc_inplace(w):
    nx, ny = w.shape[1], w.shape[2]
    for i in range(nx):
        w[1, i, 0] = 0.0
        w[1, i, ny - 1] = 0.0
        w[0, i, 0] = w[0, i, 1]
        w[0, i, ny - 1] = w[0, i, ny - 2]
        w[2, i, 0] = w[2, i, 1]
        w[2, i, ny - 1] = w[2, i, ny - 2]


@njit(**_OPTS)
def bc_adjoint_inplace(lam):
    nx, ny = lam.shape[1], lam.shape[2]
    for i in range(nx):
        lam[1, i, 0] = 0.0
        lam[1, i, ny - 1] = 0.0
        for k in (0, 2):
            lam[k, i, 1] += lam[k, i, 0]
            lam[k, i, 0] = 0.0
            lam[k, i, ny - 2] += lam[k, i, ny - 1]
            lam[k, i, ny - 1] = 0.0


@njit(**_OPTS)
def _status(w):
    nx, ny = w.shape[1], w.shape[2]
    for k in range(3):
        for i in range(nx):
            for j in range(ny):
                if not np.isfinite(w[k, i, j]):
                    return CODE_NONFINITE
    for i in range(nx):
        for j in range(ny):
            if w[2, i, j] <= 0.0:
                return CODE_NONPHYSICAL
    return CODE_OK


@njit(**_OPTS)
def _stages(w, dt, dx, dy, f, k1, k2, k3, k4, w2, w3, w4):
    a = 0.5 * dt
    rhs_into(w, dx, dy, f, k1)
    w2[:] = w + a * k1
    rhs_into(w2, dx, dy, f, k2)
    w3[:] = w + a * k2
    rhs_into(w3, dx, dy, f, k3)
    w4[:] = w + dt * k3
    rhs_into(w4, dx, dy, f, k4)


@njit(**_OPTS)
def forward(w0, n, dt, dx, dy, f):
    traj = np.empty((n + 1,) + w0.shape)
    traj[0] = w0
    k1 = np.empty_like(w0)
    k2 = np.empty_like(w0)
    k3 = np.empty_like(w0)
    k4 = np.empty_like(w0)
    w2 = np.empty_like(w0)
    w3 = np.empty_like(w0)
    w4 = np.empty_like(w0)
    c = dt / 6.0
    for s in range(n):
        w = traj[s]
        _stages(w, dt, dx, dy, f, k1, k2, k3, k4, w2, w3, w4)
        nxt = traj[s + 1]
        nxt[:] = w + c * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        bc_inplace(nxt)
        code = _status(nxt)
        if code != CODE_OK:
            return traj, s + 1, code
    return traj, FAIL_NONE, CODE_OK


@njit(**_OPTS)
def tangent(w0, dw0, n, dt, dx, dy, f):
    w = w0.copy()
    dw = dw0.copy()
    k1 = np.empty_like(w0)
    k2 = np.empty_like(w0)
    k3 = np.empty_like(w0)
    k4 = np.empty_like(w0)
    d1 = np.empty_like(w0)
    d2 = np.empty_like(w0)
    d3 = np.empty_like(w0)
    d4 = np.empty_like(w0)
    w2 = np.empty_like(w0)
    w3 = np.empty_like(w0)
    w4 = np.empty_like(w0)
    tmp = np.empty_like(w0)
    a = 0.5 * dt
    c = dt / 6.0
    for s in range(n):
        _stages(w, dt, dx, dy, f, k1, k2, k3, k4, w2, w3, w4)
        rhs_jvp_into(w, dw, dx, dy, f, d1)
        tmp[:] = dw + a * d1
        rhs_jvp_into(w2, tmp, dx, dy, f, d2)
        tmp[:] = dw + a * d2
        rhs_jvp_into(w3, tmp, dx, dy, f, d3)
        tmp[:] = dw + dt * d3
        rhs_jvp_into(w4, tmp, dx, dy, f, d4)
        w[:] = w + c * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        dw[:] = dw + c * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
        bc_inplace(w)
        bc_inplace(dw)
        code = _status(w)
        if code != CODE_OK:
            return w, dw, s + 1, code
    return w, dw, FAIL_NONE, CODE_OK


@njit(**_OPTS)
def adjoint(traj, lam, dt, dx, dy, f):
    shape = traj.shape[1:]
    lp = lam.copy()
    k1 = np.empty(shape)
    k2 = np.empty(shape)
    k3 = np.empty(shape)
    k4 = np.empty(shape)
    w2 = np.empty(shape)
    w3 = np.empty(shape)
    w4 = np.empty(shape)
    g1 = np.empty(shape)
    g2 = np.empty(shape)
    g3 = np.empty(shape)
    g4 = np.empty(shape)
    mu = np.empty(shape)
    a = 0.5 * dt
    for s in range(traj.shape[0] - 2, -1, -1):
        w = traj[s]
        _stages(w, dt, dx, dy, f, k1, k2, k3, k4, w2, w3, w4)
        bc_adjoint_inplace(lp)
        mu[:] = (dt / 6.0) * lp
        rhs_vjp_into(w4, mu, dx, dy, f, g4)
        mu[:] = (dt / 3.0) * lp + dt * g4
        rhs_vjp_into(w3, mu, dx, dy, f, g3)
        mu[:] = (dt / 3.0) * lp + a * g3
        rhs_vjp_into(w2, mu, dx, dy, f, g2)
        mu[:] = (dt / 6.0) * lp + a * g2
        rhs_vjp_into(w, mu, dx, dy, f, g1)
        lp[:] = lp + g1 + g2 + g3 + g4
    return lp


def rhs(w, dx, dy, f):
    out = np.empty_like(w)
    rhs_into(w, dx, dy, f, out)
    return out


def rhs_jvp(w, dw, dx, dy, f):
    out = np.empty_like(w)
    rhs_jvp_into(w, dw, dx, dy, f, out)
    return out


def rhs_vjp(w, r, dx, dy, f):
    g = np.empty_like(w)
    rhs_vjp_into(w, np.ascontiguousarray(r, dtype=np.float64), dx, dy, f, g)
    return g


def apply_bc(w):
    w = np.array(w, dtype=np.float64, copy=True)
    bc_inplace(w)
    return w


def apply_bc_adjoint(lam):
    lam = np.array(lam, dtype=np.float64, copy=True)
    bc_adjoint_inplace(lam)
    return lam
