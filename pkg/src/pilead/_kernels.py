"""Per-sample loop kernels, compiled with numba.

Status codes returned by the kernels: 0 completed, 1 safety abort,
2 numerical divergence.
"""

import numpy as np
from numba import njit

OK, ABORTED, DIVERGED = 0, 1, 2


@njit(cache=True)
def _df2t_step(b, a, z, x):
    # transposed direct form II; a[0] == 1, len(b) == len(a)
    n = a.shape[0]
    y = b[0] * x + (z[0] if n > 1 else 0.0)
    for i in range(n - 2):
        z[i] = b[i + 1] * x + z[i + 1] - a[i + 1] * y
    if n > 1:
        z[n - 2] = b[n - 1] * x - a[n - 1] * y
    return y


@njit(cache=True)
def _pwl(xs, ys, x):
    # piecewise-linear with linear extrapolation on both ends
    n = xs.shape[0]
    if n == 1:
        return ys[0] * x / xs[0] if xs[0] != 0.0 else ys[0]
    if x <= xs[0]:
        i = 0
    elif x >= xs[n - 1]:
        i = n - 2
    else:
        i = np.searchsorted(xs, x) - 1
        if i < 0:
            i = 0
    x0 = xs[i]
    x1 = xs[i + 1]
    return ys[i] + (ys[i + 1] - ys[i]) * (x - x0) / (x1 - x0)


@njit(cache=True)
def run_linear(r, d, noise, u_open, closed, ff, bc, ac, bp, ap, delay_n,
               abort_level, diverge_level):
    n_samples = r.shape[0]
    u = np.zeros(n_samples)
    x = np.zeros(n_samples)
    xc = np.zeros(n_samples)
    zc = np.zeros(max(ac.shape[0] - 1, 1))
    zp = np.zeros(max(ap.shape[0] - 1, 1))
    line = np.zeros(max(delay_n, 1))
    head = 0
    status = OK
    last = n_samples - 1
    for k in range(n_samples):
        # strictly proper plant: output depends on past inputs only
        y = zp[0] if ap.shape[0] > 1 else 0.0
        xc[k] = y
        xm = y + noise[k]
        x[k] = xm
        if closed:
            uk = _df2t_step(bc, ac, zc, r[k] - xm) + ff
        else:
            uk = u_open[k]
        u[k] = uk
        if abs(xm) > diverge_level or not np.isfinite(xm):
            status = DIVERGED
            last = k
            break
        if abs(xm) > abort_level:
            status = ABORTED
            last = k
            break
        if delay_n > 0:
            u_in = line[head]
            line[head] = uk
            head += 1
            if head == delay_n:
                head = 0
        else:
            u_in = uk
        _df2t_step(bp, ap, zp, u_in + d[k])
    return u, x, xc, last, status


@njit(cache=True)
def _vcm_accel(state, force, mass, viscous, coulomb, eps, gravity,
               has_res, k_r, c_r, m_r, out):
    x = state[0]
    v = state[1]
    s = v / eps
    if s > 1.0:
        s = 1.0
    elif s < -1.0:
        s = -1.0
    f = force - viscous * v - coulomb * s - gravity
    if has_res:
        coupling = k_r * (x - state[2]) + c_r * (v - state[3])
        f -= coupling
        out[2] = state[3]
        out[3] = coupling / m_r
    out[0] = v
    out[1] = f / mass


@njit(cache=True)
def run_vcm(r, d, noise, u_open, closed, ff, bc, ac, delay_n, dt, n_sub,
            mass, viscous, coulomb, eps, gravity, gain_u, gain_f,
            has_res, k_r, c_r, m_r, abort_level, diverge_level):
    n_samples = r.shape[0]
    u = np.zeros(n_samples)
    x = np.zeros(n_samples)
    xc = np.zeros(n_samples)
    v_out = np.zeros(n_samples)
    zc = np.zeros(max(ac.shape[0] - 1, 1))
    line = np.zeros(max(delay_n, 1))
    head = 0
    st = np.zeros(4)
    k1 = np.zeros(4)
    k2 = np.zeros(4)
    k3 = np.zeros(4)
    k4 = np.zeros(4)
    tmp = np.zeros(4)
    h = dt / n_sub
    status = OK
    last = n_samples - 1
    for k in range(n_samples):
        y = st[0]
        xc[k] = y
        v_out[k] = st[1]
        xm = y + noise[k]
        x[k] = xm
        if closed:
            uk = _df2t_step(bc, ac, zc, r[k] - xm) + ff
        else:
            uk = u_open[k]
        u[k] = uk
        if abs(xm) > diverge_level or not np.isfinite(xm):
            status = DIVERGED
            last = k
            break
        if abs(xm) > abort_level:
            status = ABORTED
            last = k
            break
        if delay_n > 0:
            u_in = line[head]
            line[head] = uk
            head += 1
            if head == delay_n:
                head = 0
        else:
            u_in = uk
        force = _pwl(gain_u, gain_f, u_in) + d[k]
        for _ in range(n_sub):
            _vcm_accel(st, force, mass, viscous, coulomb, eps, gravity,
                       has_res, k_r, c_r, m_r, k1)
            for i in range(4):
                tmp[i] = st[i] + 0.5 * h * k1[i]
            _vcm_accel(tmp, force, mass, viscous, coulomb, eps, gravity,
                       has_res, k_r, c_r, m_r, k2)
            for i in range(4):
                tmp[i] = st[i] + 0.5 * h * k2[i]
            _vcm_accel(tmp, force, mass, viscous, coulomb, eps, gravity,
                       has_res, k_r, c_r, m_r, k3)
            for i in range(4):
                tmp[i] = st[i] + h * k3[i]
            _vcm_accel(tmp, force, mass, viscous, coulomb, eps, gravity,
                       has_res, k_r, c_r, m_r, k4)
            for i in range(4):
                st[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return u, x, xc, v_out, last, status
