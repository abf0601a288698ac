"""Hot inner loops.

Each kernel exists twice: a numba-compiled loop and a pure-numpy/Python
implementation of the same arithmetic.  The public names (`ladder_rk4`,
`servo_loop`) point at the numba version unless numba is disabled, see
:mod:`polsynth._accel`.  Both versions are kept importable so the test suite
and the benchmark can compare them directly.
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "ladder_generator",
    "ladder_rk4",
    "ladder_rk4_numba",
    "ladder_rk4_numpy",
    "servo_loop",
    "servo_loop_numba",
    "servo_loop_numpy",
    "BACKEND",
]


# ---------------------------------------------------------------------------
# Birth-death ladder with an absorbing "lost" state appended at index N.
# ---------------------------------------------------------------------------

def ladder_generator(up1, dn1, up2, dn2, coll):
    """Dense rate matrix ``A`` with ``dp/dt = A @ p`` on the N+1 state vector.

    Columns sum to zero, so total probability is conserved.  Transitions that
    would leave the ladder at the top land in the absorbing state ``N``.
    """
    n_lev = up1.size
    a = np.zeros((n_lev + 1, n_lev + 1))
    for n in range(n_lev):
        for target, rate in ((n + 1, up1[n]), (n - 1, dn1[n]), (n + 2, up2[n]), (n - 2, dn2[n])):
            if rate == 0.0 or target < 0:
                continue
            a[min(target, n_lev), n] += rate
            a[n, n] -= rate
        a[n_lev, n] += coll
        a[n, n] -= coll
    return a


def _n_substeps(span, dt_max):
    if span <= 0.0:
        return 0
    return max(1, int(math.ceil(span / dt_max - 1e-9)))


def ladder_rk4_numpy(p0, up1, dn1, up2, dn2, coll, t0, t_out, dt_max):
    """Classical RK4 on the ladder, landing exactly on every output time."""
    a = ladder_generator(up1, dn1, up2, dn2, coll)
    eye = np.eye(a.shape[0])
    p = np.array(p0, dtype=np.float64)
    out = np.empty((t_out.size, p.size))
    t = t0
    cache = {}
    for j in range(t_out.size):
        span = t_out[j] - t
        m = _n_substeps(span, dt_max)
        if m:
            h = span / m
            step = cache.get(h)
            if step is None:
                # one RK4 step of a linear system is this polynomial in h*A
                ha = h * a
                ha2 = ha @ ha
                step = eye + ha + ha2 / 2.0 + ha2 @ ha / 6.0 + ha2 @ ha2 / 24.0
                cache[h] = step
            for _ in range(m):
                p = step @ p
        out[j] = p
        t = t_out[j]
    return out


@njit(cache=True)
def _ladder_deriv(p, up1, dn1, up2, dn2, coll, out):
    n_lev = up1.size
    for i in range(n_lev + 1):
        out[i] = 0.0
    for n in range(n_lev):
        pn = p[n]
        out[n] -= (up1[n] + dn1[n] + up2[n] + dn2[n] + coll) * pn
        if n + 1 < n_lev:
            out[n + 1] += up1[n] * pn
        else:
            out[n_lev] += up1[n] * pn
        if n + 2 < n_lev:
            out[n + 2] += up2[n] * pn
        else:
            out[n_lev] += up2[n] * pn
        if n >= 1:
            out[n - 1] += dn1[n] * pn
        if n >= 2:
            out[n - 2] += dn2[n] * pn
        out[n_lev] += coll * pn


@njit(cache=True)
def ladder_rk4_numba(p0, up1, dn1, up2, dn2, coll, t0, t_out, dt_max):
    size = p0.size
    p = p0.copy()
    k1 = np.empty(size)
    k2 = np.empty(size)
    k3 = np.empty(size)
    k4 = np.empty(size)
    tmp = np.empty(size)
    out = np.empty((t_out.size, size))
    t = t0
    for j in range(t_out.size):
        span = t_out[j] - t
        m = 0
        if span > 0.0:
            m = max(1, int(math.ceil(span / dt_max - 1e-9)))
        if m > 0:
            h = span / m
            for _ in range(m):
                _ladder_deriv(p, up1, dn1, up2, dn2, coll, k1)
                for i in range(size):
                    tmp[i] = p[i] + 0.5 * h * k1[i]
                _ladder_deriv(tmp, up1, dn1, up2, dn2, coll, k2)
                for i in range(size):
                    tmp[i] = p[i] + 0.5 * h * k2[i]
                _ladder_deriv(tmp, up1, dn1, up2, dn2, coll, k3)
                for i in range(size):
                    tmp[i] = p[i] + h * k3[i]
                _ladder_deriv(tmp, up1, dn1, up2, dn2, coll, k4)
                for i in range(size):
                    p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        for i in range(size):
            out[j, i] = p[i]
        t = t_out[j]
    return out


# ---------------------------------------------------------------------------
# Unity-feedback servo: bilinear PI^2D controller, integer-sample dead time,
# zero-order-hold first-order actuator.
# ---------------------------------------------------------------------------

_BLOWUP = 1e3


def servo_loop_numpy(setpoint, kp, ki, kii, kd, w_d, a_pole, gain, delay, dt, n_steps):
    """Reference loop in plain Python; returns ``y`` of length ``n_steps + 1``."""
    y = np.zeros(n_steps + 1)
    ubuf = np.zeros(delay + 1)
    c = 2.0 / dt
    d_pole = (c - w_d) / (c + w_d)
    d_gain = kd * w_d * c / (c + w_d)
    e_prev = i1 = i1_prev = i2 = d = x = 0.0
    for k in range(n_steps):
        e = setpoint - y[k]
        i1_prev = i1
        i1 = i1 + 0.5 * dt * (e + e_prev)
        i2 = i2 + 0.5 * dt * (i1 + i1_prev)
        d = d_pole * d + d_gain * (e - e_prev)
        u = kp * e + ki * i1 + kii * i2 + d
        e_prev = e
        ubuf[k % (delay + 1)] = u
        u_late = ubuf[(k - delay) % (delay + 1)] if k >= delay else 0.0
        x = a_pole * x + (1.0 - a_pole) * gain * u_late
        y[k + 1] = x
        if abs(x) > _BLOWUP:
            y[k + 1:] = x
            break
    return y


@njit(cache=True)
def servo_loop_numba(setpoint, kp, ki, kii, kd, w_d, a_pole, gain, delay, dt, n_steps):
    y = np.zeros(n_steps + 1)
    ubuf = np.zeros(delay + 1)
    c = 2.0 / dt
    d_pole = (c - w_d) / (c + w_d)
    d_gain = kd * w_d * c / (c + w_d)
    e_prev = 0.0
    i1 = 0.0
    i1_prev = 0.0
    i2 = 0.0
    d = 0.0
    x = 0.0
    for k in range(n_steps):
        e = setpoint - y[k]
        i1_prev = i1
        i1 = i1 + 0.5 * dt * (e + e_prev)
        i2 = i2 + 0.5 * dt * (i1 + i1_prev)
        d = d_pole * d + d_gain * (e - e_prev)
        u = kp * e + ki * i1 + kii * i2 + d
        e_prev = e
        ubuf[k % (delay + 1)] = u
        u_late = 0.0
        if k >= delay:
            u_late = ubuf[(k - delay) % (delay + 1)]
        x = a_pole * x + (1.0 - a_pole) * gain * u_late
        y[k + 1] = x
        if abs(x) > _BLOWUP:
            for j in range(k + 1, n_steps + 1):
                y[j] = x
            break
    return y


if USE_NUMBA:
    ladder_rk4 = ladder_rk4_numba
    servo_loop = servo_loop_numba
    BACKEND = "numba"
else:
    ladder_rk4 = ladder_rk4_numpy
    servo_loop = servo_loop_numpy
    BACKEND = "numpy"
