"""Compiled inner loops shared by the dense and the streaming code paths.

Unweighted running sums are Neumaier pairs ``(sum, compensation)`` stored in
two consecutive slots of a float64 state vector. Weighted sums are plain
floats kept divided by the current weight omega_t and multiplied by a decay
factor below one at every step. The factor comes from
``log_omega_increment``; omega itself is never formed.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

CHUNK_STEPS = 1 << 16
HIST_BINS = 2048
HIST_SPAN = 8.0

# replica state slots; Kahan pairs take two
S_XX = 0
S_XDX = 2
S_M = 4
S_A = 6
S_B = 7
S_Q = 8
S_W = 9
S_MW = 10
BAR_TILDE = 11
BAR_HAT = 13
H2X = 15
H1X = 17
H0X = 19
H2 = 21
H1 = 23
G2X = 25
G1X = 27
G2 = 29
G1 = 31
QSL1_LS = 33
QSL2_LS = 35
QSL1_W = 37
QSL2_W = 39
MASS_LS = 41
MASS_W = 43
READY = 45
DEGENERATE = 46
CENTER_LS = 47
CENTER_W = 48
STATE_SIZE = 49

# checkpoint record columns
R_T = 0
R_HAT = 1
R_TILDE = 2
R_BAR_TILDE = 3
R_BAR_HAT = 4
R_ZETA = 5
R_X2_MEAN = 6
R_B_NORM = 7
R_Q_NORM = 8
R_W_NORM = 9
R_M_RESIDUAL = 10
R_MW_RESIDUAL = 11
R_H2X = 12
R_H1X = 13
R_H0X = 14
R_H2 = 15
R_H1 = 16
R_G2X = 17
R_G1X = 18
R_G2 = 19
R_G1 = 20
R_QSL1_LS = 21
R_QSL2_LS = 22
R_QSL1_W = 23
R_QSL2_W = 24
R_KS_LS = 25
R_KS_W = 26
R_MASS_LS = 27
R_MASS_W = 28
RECORD_WIDTH = 29

_SQRT2 = math.sqrt(2.0)


@njit(cache=True, nogil=True)
def kahan_add(acc, k, value):
    s = acc[k]
    t = s + value
    if abs(s) >= abs(value):
        acc[k + 1] += (s - t) + value
    else:
        acc[k + 1] += (value - t) + s
    acc[k] = t


@njit(cache=True, nogil=True)
def kahan_value(acc, k):
    return acc[k] + acc[k + 1]


@njit(cache=True, nogil=True)
def log_omega_increment(s, ds, alpha):
    """log omega(s + ds) - log omega(s) without cancellation, s > 0."""
    beta = 1.0 - alpha
    lr = math.log1p(ds / s)
    return -0.5 * alpha * lr + s**beta * math.expm1(beta * lr) / (2.0 * beta)


@njit(cache=True, nogil=True)
def exact_fill(x0, z, decay, scale, out):
    out[0] = x0
    for i in range(z.shape[0]):
        out[i + 1] = decay * out[i] + scale * z[i]


@njit(cache=True, nogil=True)
def euler_fill(x0, z, theta, sigma, dt, out, db):
    root = math.sqrt(dt)
    out[0] = x0
    for i in range(z.shape[0]):
        d = root * z[i]
        db[i] = d
        out[i + 1] = out[i] + theta * out[i] * dt + sigma * d


@njit(cache=True, nogil=True)
def coupled_fill(x0, z, decay, gain, resid, sigma, dt, out, db):
    # column 0 drives dB, column 1 the part of the transition noise orthogonal to it
    root = math.sqrt(dt)
    out[0] = x0
    for i in range(z.shape[0]):
        d = root * z[i, 0]
        db[i] = d
        out[i + 1] = decay * out[i] + sigma * (gain * d + resid * z[i, 1])


@njit(cache=True, nogil=True)
def compensated_dot(f, g):
    acc = np.zeros(2)
    for i in range(f.shape[0]):
        kahan_add(acc, 0, f[i] * g[i])
    return kahan_value(acc, 0)


@njit(cache=True, nogil=True)
def compensated_cumsum(v, out):
    """out[0] = 0 and out[k] = v[0] + ... + v[k-1]."""
    acc = np.zeros(2)
    out[0] = 0.0
    for i in range(v.shape[0]):
        kahan_add(acc, 0, v[i])
        out[i + 1] = kahan_value(acc, 0)


@njit(cache=True, nogil=True)
def ls_sweep(x, dt, ib, theta_hat, zeta):
    acc = np.zeros(4)
    n = x.shape[0] - 1
    for i in range(n + 1):
        if i >= ib:
            k = i - ib
            z = kahan_value(acc, 0)
            zeta[k] = z
            if z > 0.0:
                theta_hat[k] = kahan_value(acc, 2) / z
            else:
                theta_hat[k] = np.nan
        if i < n:
            xi = x[i]
            kahan_add(acc, 0, xi * xi * dt)
            kahan_add(acc, 2, xi * (x[i + 1] - xi))


@njit(cache=True, nogil=True)
def weighted_sweep(x, dt, alpha, ib, u0, theta_tilde, a_norm, b_norm, q_norm, u_norm):
    # omega_0 is infinite; weighted sums start at the first grid point after 0
    a = 0.0
    b = 0.0
    q = 0.0
    w = 0.0
    n = x.shape[0] - 1
    for i in range(n + 1):
        if i == ib:
            w = u0
        if i >= ib:
            k = i - ib
            a_norm[k] = a
            b_norm[k] = b
            q_norm[k] = q
            u_norm[k] = w
            theta_tilde[k] = a / b if b > 0.0 else np.nan
        if i < n and i >= 1:
            decay = math.exp(-log_omega_increment(i * dt, dt, alpha))
            xi = x[i]
            x2dt = xi * xi * dt
            a = (a + xi * (x[i + 1] - xi)) * decay
            b = (b + x2dt) * decay
            q = (q + x2dt) * decay * decay
            if i >= ib:
                w = (w + dt) * decay


@njit(cache=True, nogil=True)
def bar_sweep(values, dt, ib, out):
    """Running time average; [0, ib*dt) is filled with values[0]."""
    acc = np.zeros(2)
    head = values[0] * ib * dt
    for k in range(values.shape[0]):
        out[k] = (head + kahan_value(acc, 0)) / ((ib + k) * dt)
        kahan_add(acc, 0, values[k] * dt)


@njit(cache=True, nogil=True)
def hist_add(hist, u, weight):
    k = int(math.floor((u + HIST_SPAN) * HIST_BINS / (2.0 * HIST_SPAN)))
    if k < 0:
        k = 0
    elif k >= HIST_BINS:
        k = HIST_BINS - 1
    hist[k] += weight


@njit(cache=True, nogil=True)
def hist_ks(hist, total):
    """Sup distance between a binned standardised measure and N(0, 1) at bin edges."""
    if total <= 0.0:
        return np.nan
    width = 2.0 * HIST_SPAN / HIST_BINS
    cum = 0.0
    d = 0.0
    for k in range(HIST_BINS):
        lo = -HIST_SPAN + k * width
        d = max(d, abs(cum / total - 0.5 * math.erfc(-lo / _SQRT2)))
        cum += hist[k]
        hi = lo + width
        d = max(d, abs(cum / total - 0.5 * math.erfc(-hi / _SQRT2)))
    return d


@njit(cache=True, nogil=True)
def _initialise(st, i, dt, u0):
    zeta = kahan_value(st, S_XX)
    if zeta <= 0.0 or st[S_B] <= 0.0:
        st[DEGENERATE] = 1.0
        return
    th = kahan_value(st, S_XDX) / zeta
    tt = st[S_A] / st[S_B]
    t0 = i * dt
    st[READY] = 1.0
    st[S_W] = u0
    st[CENTER_LS] = th
    st[CENTER_W] = tt
    st[BAR_TILDE] = tt * t0
    st[BAR_TILDE + 1] = 0.0
    st[BAR_HAT] = th * t0
    st[BAR_HAT + 1] = 0.0


@njit(cache=True, nogil=True)
def _record(st, r, t, th, tt, hist_ls, hist_w):
    zeta = kahan_value(st, S_XX)
    r[R_T] = t
    r[R_HAT] = th
    r[R_TILDE] = tt
    r[R_BAR_TILDE] = kahan_value(st, BAR_TILDE) / t
    r[R_BAR_HAT] = kahan_value(st, BAR_HAT) / t
    r[R_ZETA] = zeta
    r[R_X2_MEAN] = zeta / t
    r[R_B_NORM] = st[S_B]
    r[R_Q_NORM] = st[S_Q]
    r[R_W_NORM] = st[S_W]
    r[R_M_RESIDUAL] = abs(kahan_value(st, S_M))
    r[R_MW_RESIDUAL] = abs(st[S_MW])
    r[R_H2X] = kahan_value(st, H2X)
    r[R_H1X] = kahan_value(st, H1X)
    r[R_H0X] = kahan_value(st, H0X)
    r[R_H2] = kahan_value(st, H2)
    r[R_H1] = kahan_value(st, H1)
    r[R_G2X] = kahan_value(st, G2X)
    r[R_G1X] = kahan_value(st, G1X)
    r[R_G2] = kahan_value(st, G2)
    r[R_G1] = kahan_value(st, G1)
    r[R_QSL1_LS] = kahan_value(st, QSL1_LS)
    r[R_QSL2_LS] = kahan_value(st, QSL2_LS)
    r[R_QSL1_W] = kahan_value(st, QSL1_W)
    r[R_QSL2_W] = kahan_value(st, QSL2_W)
    mass_ls = kahan_value(st, MASS_LS)
    mass_w = kahan_value(st, MASS_W)
    r[R_MASS_LS] = mass_ls
    r[R_MASS_W] = mass_w
    r[R_KS_LS] = hist_ks(hist_ls, mass_ls)
    r[R_KS_W] = hist_ks(hist_w, mass_w)


@njit(cache=True, nogil=True)
def replica_sweep(
    x, db, has_db, k0, dt, alpha, ib, u0, theta, sigma,
    cp_steps, cp_ptr, st, hist_ls, hist_w, rec, final,
):
    """Advance one replica over a path chunk x[0..m] starting at grid index k0.

    Per step the order is: initialise at the burn-in index, record if the
    index is a checkpoint, accumulate the integrands over [s, s + dt), then
    fold step i into the running sums. ``final`` also visits x[m].
    Histogram atoms are standardised to unit variance: sqrt(s)(theta_hat - theta)
    by sqrt(2|theta|), theta_tilde - theta by sqrt(2|theta| V_s^2 / U_s^2).
    Returns the next checkpoint pointer.
    """
    m = x.shape[0] - 1
    beta = 1.0 - alpha
    two_th = 2.0 * abs(theta)
    sd_ls = math.sqrt(two_th)
    inv_sigma = 1.0 / sigma if sigma > 0.0 else 0.0
    last = m + 1 if final else m
    for j in range(last):
        i = k0 + j
        xi = x[j]
        s = i * dt
        if i == ib:
            _initialise(st, i, dt, u0)
            if st[DEGENERATE] == 1.0:
                return cp_ptr
        ready = st[READY] == 1.0
        th = 0.0
        tt = 0.0
        if ready:
            th = kahan_value(st, S_XDX) / kahan_value(st, S_XX)
            tt = st[S_A] / st[S_B]
            if cp_ptr < cp_steps.shape[0] and cp_steps[cp_ptr] == i:
                _record(st, rec[cp_ptr], s, th, tt, hist_ls, hist_w)
                cp_ptr += 1
        if j == m:
            break
        x2dt = xi * xi * dt
        lr = 0.0
        em = 0.0
        pw = 0.0
        if i >= 1:
            lr = math.log1p(dt / s)
            pw = s**beta
            em = math.expm1(beta * lr)
        if ready:
            zeta = kahan_value(st, S_XX)
            eh = th - theta
            et = tt - theta
            kahan_add(st, BAR_TILDE, tt * dt)
            kahan_add(st, BAR_HAT, th * dt)
            ch = th - st[CENTER_LS]
            cw = tt - st[CENTER_W]
            kahan_add(st, H2X, ch * ch * x2dt)
            kahan_add(st, H1X, ch * x2dt)
            kahan_add(st, H0X, x2dt)
            kahan_add(st, H2, ch * ch * dt)
            kahan_add(st, H1, ch * dt)
            kahan_add(st, G2X, cw * cw * x2dt)
            kahan_add(st, G1X, cw * x2dt)
            kahan_add(st, G2, cw * cw * dt)
            kahan_add(st, G1, cw * dt)
            kahan_add(st, QSL1_LS, zeta * zeta * eh * eh * dt / (s * s))
            kahan_add(st, QSL2_LS, eh * eh * x2dt)
            pu = st[S_B] / st[S_W]
            kahan_add(st, QSL1_W, pu * pu * et * et * dt)
            kahan_add(st, QSL2_W, et * et * x2dt)
            w_ls = lr
            w_w = pw * em / beta
            kahan_add(st, MASS_LS, w_ls)
            kahan_add(st, MASS_W, w_w)
            hist_add(hist_ls, math.sqrt(s) * eh / sd_ls, w_ls)
            v_norm = s**alpha * -math.expm1(-pw / beta)
            hist_add(hist_w, et * st[S_W] / math.sqrt(two_th * v_norm), w_w)
        dx = x[j + 1] - xi
        kahan_add(st, S_XX, x2dt)
        kahan_add(st, S_XDX, xi * dx)
        e = 0.0
        if has_db:
            e = xi * (dx - theta * xi * dt - sigma * db[j]) * inv_sigma
            kahan_add(st, S_M, e)
        if i >= 1:
            decay = math.exp(0.5 * alpha * lr - pw * em / (2.0 * beta))
            st[S_A] = (st[S_A] + xi * dx) * decay
            st[S_B] = (st[S_B] + x2dt) * decay
            st[S_Q] = (st[S_Q] + x2dt) * decay * decay
            st[S_MW] = (st[S_MW] + e) * decay
            if ready:
                st[S_W] = (st[S_W] + dt) * decay
    return cp_ptr


@njit(cache=True, nogil=True)
def weighted_cumsum(v, dt, alpha, ib, out):
    """out[k] = sum_{1 <= j < ib + k} omega_j v_j / omega_{ib + k}."""
    acc = 0.0
    n = v.shape[0]
    for i in range(n + 1):
        if i >= ib:
            out[i - ib] = acc
        if i < n and i >= 1:
            acc = (acc + v[i]) * math.exp(-log_omega_increment(i * dt, dt, alpha))
