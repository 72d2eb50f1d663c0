"""Pure-Python Dormand-Prince 5(4) kernels.

Fallback for :mod:`pontryagus._kernels`; same algorithm, same status codes,
same step-size control. Between one and two orders of magnitude slower.
"""

import math

import numpy as np

EPS_DIR = 1e-12
EVENT_TOL = 1e-10

OK = 0
STEP_UNDERFLOW = 1
MASS_DEPLETED = 2
MAX_STEPS = 3
NONFINITE = 4

# a failure with less than this fraction of the initial mass left is depletion
MASS_FLOOR = 1e-6

NA = 14
NS = 7

A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = 9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0
B1, B3, B4, B5, B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
E1, E3, E4, E5, E6, E7 = (
    71.0 / 57600.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
)


def _throttle_arg(y, c1, c2, alpha):
    lv = math.sqrt(y[10] * y[10] + y[11] * y[11] + y[12] * y[12])
    m = y[6]
    if alpha >= 1.0:
        return c1 * lv + m * c2 * y[13] - m
    return (c1 * lv / m + y[13] * c2 - alpha) / (2.0 * (1.0 - alpha))


def _natural_mode(y, c1, c2, alpha):
    lv = math.sqrt(y[10] * y[10] + y[11] * y[11] + y[12] * y[12])
    if lv <= EPS_DIR:
        return 0
    g = _throttle_arg(y, c1, c2, alpha)
    if alpha >= 1.0:
        return 2 if g > 0.0 else 0
    if g <= 0.0:
        return 0
    if g >= 1.0:
        return 2
    return 1


def _event_value(y, c1, c2, alpha, frozen, target):
    g = _throttle_arg(y, c1, c2, alpha)
    if alpha >= 1.0 or frozen == 0:
        return g
    if frozen == 2:
        return g - 1.0
    return g if target == 0 else g - 1.0


def _rhs_aug(y, mode, c1, c2, alpha, mu):
    r2 = y[0] * y[0] + y[1] * y[1] + y[2] * y[2]
    rn = math.sqrt(r2)
    r3 = r2 * rn
    r5 = r3 * r2
    m = y[6]
    lvn = math.sqrt(y[10] * y[10] + y[11] * y[11] + y[12] * y[12])
    u = 0.0
    ix, iy, iz = 1.0, 0.0, 0.0
    if lvn > EPS_DIR:
        ix = -y[10] / lvn
        iy = -y[11] / lvn
        iz = -y[12] / lvn
        if mode == 2:
            u = 1.0
        elif mode == 1:
            u = _throttle_arg(y, c1, c2, alpha)
    thr = c1 * u / m
    lvdotr = y[10] * y[0] + y[11] * y[1] + y[12] * y[2]
    return [
        y[3],
        y[4],
        y[5],
        -mu * y[0] / r3 + thr * ix,
        -mu * y[1] / r3 + thr * iy,
        -mu * y[2] / r3 + thr * iz,
        -c2 * u,
        mu * y[10] / r3 - 3.0 * mu * lvdotr * y[0] / r5,
        mu * y[11] / r3 - 3.0 * mu * lvdotr * y[1] / r5,
        mu * y[12] / r3 - 3.0 * mu * lvdotr * y[2] / r5,
        -y[7],
        -y[8],
        -y[9],
        -c1 * u * lvn / (m * m),
    ]


def _dopri_stages(f, y, h, k1):
    n = len(y)
    k2 = f([y[i] + h * A21 * k1[i] for i in range(n)])
    k3 = f([y[i] + h * (A31 * k1[i] + A32 * k2[i]) for i in range(n)])
    k4 = f([y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]) for i in range(n)])
    k5 = f([y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]) for i in range(n)])
    k6 = f([y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]) for i in range(n)])
    ynew = [y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]) for i in range(n)]
    k7 = f(ynew)
    err = [h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]) for i in range(n)]
    return ynew, k7, err


def _error_norm(y, ynew, err, rtol, atol):
    acc = 0.0
    for a, b, e in zip(y, ynew, err):
        sk = atol + rtol * max(abs(a), abs(b))
        acc += (e / sk) ** 2
    return math.sqrt(acc / len(y))


def _next_factor(errn, err_old, rejected):
    errn = max(errn, 1e-10)
    fac = 0.9 * errn**-0.17 * err_old**0.04
    fac = min(10.0, max(0.2, fac))
    if rejected:
        fac = min(fac, 1.0)
    return fac, errn


def _finite(y):
    return all(math.isfinite(v) for v in y)


def integrate_augmented(y0, duration, c1, c2, alpha, mu, rtol=1e-12, atol=1e-12, h0=0.0, max_steps=1000000, record=True):
    """Integrate the state/costate system under the optimal control law.

    Returns ``(status, ts, ys, nfev)``; ``ys`` has one row per recorded node.
    """
    y = [float(v) for v in y0]
    t = 0.0
    h = h0 if h0 > 0.0 else duration / 100.0
    err_old = 1e-4
    status = OK
    nsteps = 0
    nfev = 0
    rejected = False
    mode = _natural_mode(y, c1, c2, alpha)
    k1 = None
    ts_rec = [0.0]
    ys_rec = [list(y)]

    def f_for(mode_):
        return lambda z: _rhs_aug(z, mode_, c1, c2, alpha, mu)

    f = f_for(mode)
    while t < duration:
        if nsteps >= max_steps:
            status = MAX_STEPS
            break
        last = False
        if t + h >= duration:
            h = duration - t
            last = True
        hmin = 1e-15 * max(abs(t), 1.0)
        if h < hmin:
            status = MASS_DEPLETED if y[6] <= MASS_FLOOR * y0[6] else STEP_UNDERFLOW
            break
        if k1 is None:
            k1 = f(y)
            nfev += 1
        ynew, k7, err = _dopri_stages(f, y, h, k1)
        nfev += 6
        errn = _error_norm(y, ynew, err, rtol, atol) if _finite(ynew) and _finite(err) else math.nan
        if not math.isfinite(errn):
            h *= 0.2
            rejected = True
            if h < hmin:
                status = MASS_DEPLETED if y[6] <= MASS_FLOOR * y0[6] else NONFINITE
                break
            continue
        if errn > 1.0:
            h *= max(0.2, 0.9 * errn**-0.2)
            rejected = True
            continue

        nsteps += 1
        end_mode = _natural_mode(ynew, c1, c2, alpha)
        if end_mode != mode:
            h_lo, h_hi = 0.0, h
            g_lo = _event_value(y, c1, c2, alpha, mode, end_mode)
            g_hi = _event_value(ynew, c1, c2, alpha, mode, end_mode)
            ylo = None
            side = 0
            it = 0
            while h_hi - h_lo > EVENT_TOL and it < 200:
                it += 1
                if it % 4 == 0 or g_hi == g_lo:
                    h_mid = 0.5 * (h_lo + h_hi)
                else:
                    h_mid = h_hi - g_hi * (h_hi - h_lo) / (g_hi - g_lo)
                    if h_mid <= h_lo or h_mid >= h_hi:
                        h_mid = 0.5 * (h_lo + h_hi)
                ymid, _, _ = _dopri_stages(f, y, h_mid, k1)
                nfev += 6
                g_mid = _event_value(ymid, c1, c2, alpha, mode, end_mode)
                if _natural_mode(ymid, c1, c2, alpha) == mode:
                    h_lo, g_lo, ylo = h_mid, g_mid, ymid
                    if side == -1:
                        g_hi *= 0.5
                    side = -1
                else:
                    h_hi, g_hi = h_mid, g_mid
                    if side == 1:
                        g_lo *= 0.5
                    side = 1
            yhi, _, _ = _dopri_stages(f, y, h_hi, k1)
            nfev += 6
            new_mode = _natural_mode(yhi, c1, c2, alpha)
            if h_lo > 0.0:
                y = ylo
                t += h_lo
                if not _finite(y):
                    status = NONFINITE
                    break
                if record:
                    ts_rec.append(t)
                    ys_rec.append(list(y))
                if y[6] <= 0.0:
                    status = MASS_DEPLETED
                    break
            mode = new_mode
            f = f_for(mode)
            k1 = None
            rejected = False
            if h_lo > 0.0 and t >= duration:
                break
            continue

        y = ynew
        k1 = k7
        t = duration if last else t + h
        if not _finite(y):
            status = NONFINITE
            break
        if record or last:
            ts_rec.append(t)
            ys_rec.append(list(y))
        if y[6] <= 0.0:
            status = MASS_DEPLETED
            break
        fac, err_old = _next_factor(errn, err_old, rejected)
        rejected = False
        h *= fac

    if ts_rec[-1] != t:
        ts_rec.append(t)
        ys_rec.append(list(y))
    if not record and len(ts_rec) > 2:
        ts_rec = [ts_rec[0], ts_rec[-1]]
        ys_rec = [ys_rec[0], ys_rec[-1]]
    return status, np.array(ts_rec), np.array(ys_rec), nfev


def integrate_thrust(y0, duration, ux, uy, uz, c1, c2, mu, rtol=1e-12, atol=1e-12, h0=0.0, max_steps=1000000):
    """Integrate the 7-element state under a constant thrust vector ``u * dir``.

    Returns ``(status, y_final, nfev)``.
    """
    c2u = c2 * math.sqrt(ux * ux + uy * uy + uz * uz)

    def f(y):
        r2 = y[0] * y[0] + y[1] * y[1] + y[2] * y[2]
        r3 = r2 * math.sqrt(r2)
        k = c1 / y[6]
        return [y[3], y[4], y[5], -mu * y[0] / r3 + k * ux, -mu * y[1] / r3 + k * uy, -mu * y[2] / r3 + k * uz, -c2u]

    y = [float(v) for v in y0]
    t = 0.0
    h = h0 if h0 > 0.0 else duration / 100.0
    err_old = 1e-4
    status = OK
    nsteps = 0
    nfev = 0
    rejected = False
    k1 = None
    while t < duration:
        if nsteps >= max_steps:
            status = MAX_STEPS
            break
        last = False
        if t + h >= duration:
            h = duration - t
            last = True
        hmin = 1e-15 * max(abs(t), 1.0)
        if h < hmin:
            status = MASS_DEPLETED if y[6] <= MASS_FLOOR * y0[6] else STEP_UNDERFLOW
            break
        if k1 is None:
            k1 = f(y)
            nfev += 1
        ynew, k7, err = _dopri_stages(f, y, h, k1)
        nfev += 6
        errn = _error_norm(y, ynew, err, rtol, atol) if _finite(ynew) else math.nan
        if not math.isfinite(errn):
            status = MASS_DEPLETED if y[6] <= MASS_FLOOR * y0[6] else NONFINITE
            break
        if errn > 1.0:
            h *= max(0.2, 0.9 * errn**-0.2)
            rejected = True
            continue
        nsteps += 1
        y = ynew
        k1 = k7
        t = duration if last else t + h
        if y[6] <= 0.0:
            status = MASS_DEPLETED
            break
        fac, err_old = _next_factor(errn, err_old, rejected)
        rejected = False
        h *= fac
    return status, np.array(y), nfev


C2, C3, C4, C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0


def integrate_generic(f, y0, t0, duration, rtol=1e-12, atol=1e-12, h0=0.0, max_steps=1000000):
    """Adaptive Dormand-Prince for an arbitrary non-autonomous ``f(t, y)``.

    Used for continuous-feedback rollouts where the right-hand side calls back
    into Python anyway. Returns ``(status, y_final, nfev)``.
    """
    y = np.asarray(y0, dtype=float).copy()
    t = 0.0
    h = h0 if h0 > 0.0 else duration / 100.0
    err_old = 1e-4
    status = OK
    nsteps = 0
    nfev = 0
    rejected = False
    k1 = None
    while t < duration:
        if nsteps >= max_steps:
            status = MAX_STEPS
            break
        last = False
        if t + h >= duration:
            h = duration - t
            last = True
        hmin = 1e-15 * max(abs(t), 1.0)
        if h < hmin:
            status = STEP_UNDERFLOW
            break
        tt = t0 + t
        if k1 is None:
            k1 = np.asarray(f(tt, y), dtype=float)
            nfev += 1
        k2 = f(tt + C2 * h, y + h * A21 * k1)
        k3 = f(tt + C3 * h, y + h * (A31 * k1 + A32 * k2))
        k4 = f(tt + C4 * h, y + h * (A41 * k1 + A42 * k2 + A43 * k3))
        k5 = f(tt + C5 * h, y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4))
        k6 = f(tt + h, y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5))
        ynew = y + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6)
        k7 = f(tt + h, ynew)
        nfev += 6
        err = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)
        sk = atol + rtol * np.maximum(np.abs(y), np.abs(ynew))
        errn = float(np.sqrt(np.mean((err / sk) ** 2)))
        if not math.isfinite(errn):
            status = NONFINITE
            break
        if errn > 1.0:
            h *= max(0.2, 0.9 * errn**-0.2)
            rejected = True
            continue
        nsteps += 1
        y = ynew
        k1 = k7
        t = duration if last else t + h
        fac, err_old = _next_factor(errn, err_old, rejected)
        rejected = False
        h *= fac
    return status, y, nfev
