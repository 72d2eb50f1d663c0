# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Dormand-Prince 5(4) kernels.

Mirrors ``_pykernels`` operation for operation; the two must stay in sync.
State layout of the augmented vector:
``[rx, ry, rz, vx, vy, vz, m, lrx, lry, lrz, lvx, lvy, lvz, lm]``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, pow, isfinite

cnp.import_array()

DEF NA = 14
DEF NS = 7

cdef double EPS_DIR = 1e-12
cdef double EVENT_TOL = 1e-10

# status codes, keep in sync with _pykernels
cdef int OK = 0
cdef int STEP_UNDERFLOW = 1
cdef int MASS_DEPLETED = 2
cdef int MAX_STEPS = 3
cdef int NONFINITE = 4
# a failure with less than this fraction of the initial mass left is depletion
cdef double MASS_FLOOR = 1e-6

# Dormand-Prince tableau
cdef double A21 = 1.0 / 5.0
cdef double A31 = 3.0 / 40.0, A32 = 9.0 / 40.0
cdef double A41 = 44.0 / 45.0, A42 = -56.0 / 15.0, A43 = 32.0 / 9.0
cdef double A51 = 19372.0 / 6561.0, A52 = -25360.0 / 2187.0
cdef double A53 = 64448.0 / 6561.0, A54 = -212.0 / 729.0
cdef double A61 = 9017.0 / 3168.0, A62 = -355.0 / 33.0, A63 = 46732.0 / 5247.0
cdef double A64 = 49.0 / 176.0, A65 = -5103.0 / 18656.0
cdef double B1 = 35.0 / 384.0, B3 = 500.0 / 1113.0, B4 = 125.0 / 192.0
cdef double B5 = -2187.0 / 6784.0, B6 = 11.0 / 84.0
cdef double E1 = 71.0 / 57600.0, E3 = -71.0 / 16695.0, E4 = 71.0 / 1920.0
cdef double E5 = -17253.0 / 339200.0, E6 = 22.0 / 525.0, E7 = -1.0 / 40.0


cdef struct Params:
    double c1
    double c2
    double alpha
    double mu


cdef inline double throttle_arg(const double* y, Params* p) nogil:
    # unclamped throttle (alpha < 1) or switching function (alpha == 1)
    cdef double lv = sqrt(y[10] * y[10] + y[11] * y[11] + y[12] * y[12])
    cdef double m = y[6]
    if p.alpha >= 1.0:
        return p.c1 * lv + m * p.c2 * y[13] - m
    return (p.c1 * lv / m + y[13] * p.c2 - p.alpha) / (2.0 * (1.0 - p.alpha))


cdef inline int natural_mode(const double* y, Params* p) nogil:
    cdef double lv = sqrt(y[10] * y[10] + y[11] * y[11] + y[12] * y[12])
    cdef double g
    if lv <= EPS_DIR:
        return 0
    g = throttle_arg(y, p)
    if p.alpha >= 1.0:
        return 2 if g > 0.0 else 0
    if g <= 0.0:
        return 0
    if g >= 1.0:
        return 2
    return 1


cdef inline double event_value(const double* y, Params* p, int frozen, int target) nogil:
    # continuous function whose root separates frozen from target mode
    cdef double g = throttle_arg(y, p)
    if p.alpha >= 1.0:
        return g
    if frozen == 0:
        return g
    if frozen == 2:
        return g - 1.0
    if target == 0:
        return g
    return g - 1.0


cdef inline void rhs_aug(const double* y, int mode, Params* p, double* out) nogil:
    cdef double r2 = y[0] * y[0] + y[1] * y[1] + y[2] * y[2]
    cdef double rn = sqrt(r2)
    cdef double r3 = r2 * rn
    cdef double r5 = r3 * r2
    cdef double m = y[6]
    cdef double lvn = sqrt(y[10] * y[10] + y[11] * y[11] + y[12] * y[12])
    cdef double u = 0.0
    cdef double ix = 1.0, iy = 0.0, iz = 0.0
    cdef double lvdotr, thr
    if lvn > EPS_DIR:
        ix = -y[10] / lvn
        iy = -y[11] / lvn
        iz = -y[12] / lvn
        if mode == 2:
            u = 1.0
        elif mode == 1:
            u = throttle_arg(y, p)
    thr = p.c1 * u / m
    out[0] = y[3]
    out[1] = y[4]
    out[2] = y[5]
    out[3] = -p.mu * y[0] / r3 + thr * ix
    out[4] = -p.mu * y[1] / r3 + thr * iy
    out[5] = -p.mu * y[2] / r3 + thr * iz
    out[6] = -p.c2 * u
    lvdotr = y[10] * y[0] + y[11] * y[1] + y[12] * y[2]
    out[7] = p.mu * y[10] / r3 - 3.0 * p.mu * lvdotr * y[0] / r5
    out[8] = p.mu * y[11] / r3 - 3.0 * p.mu * lvdotr * y[1] / r5
    out[9] = p.mu * y[12] / r3 - 3.0 * p.mu * lvdotr * y[2] / r5
    out[10] = -y[7]
    out[11] = -y[8]
    out[12] = -y[9]
    out[13] = -p.c1 * u * lvn / (m * m)


cdef inline void rhs_thrust(const double* y, const double* thrust, double c1, double c2u,
                            double mu, double* out) nogil:
    # thrust = u * direction, held constant
    cdef double r2 = y[0] * y[0] + y[1] * y[1] + y[2] * y[2]
    cdef double r3 = r2 * sqrt(r2)
    cdef double k = c1 / y[6]
    out[0] = y[3]
    out[1] = y[4]
    out[2] = y[5]
    out[3] = -mu * y[0] / r3 + k * thrust[0]
    out[4] = -mu * y[1] / r3 + k * thrust[1]
    out[5] = -mu * y[2] / r3 + k * thrust[2]
    out[6] = -c2u


cdef class _Stepper:
    """Scratch buffers for one Dormand-Prince step of the augmented system."""
    cdef double k[7][NA]
    cdef double ytmp[NA]
    cdef double ynew[NA]
    cdef double err[NA]
    cdef Params p
    cdef long nfev

    cdef void stages(self, const double* y, double h, int mode, bint have_k1):
        cdef int i
        cdef double* k1 = self.k[0]
        cdef double* k2 = self.k[1]
        cdef double* k3 = self.k[2]
        cdef double* k4 = self.k[3]
        cdef double* k5 = self.k[4]
        cdef double* k6 = self.k[5]
        cdef double* k7 = self.k[6]
        if not have_k1:
            rhs_aug(y, mode, &self.p, k1)
            self.nfev += 1
        for i in range(NA):
            self.ytmp[i] = y[i] + h * A21 * k1[i]
        rhs_aug(self.ytmp, mode, &self.p, k2)
        for i in range(NA):
            self.ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i])
        rhs_aug(self.ytmp, mode, &self.p, k3)
        for i in range(NA):
            self.ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
        rhs_aug(self.ytmp, mode, &self.p, k4)
        for i in range(NA):
            self.ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
        rhs_aug(self.ytmp, mode, &self.p, k5)
        for i in range(NA):
            self.ytmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i]
                                       + A64 * k4[i] + A65 * k5[i])
        rhs_aug(self.ytmp, mode, &self.p, k6)
        for i in range(NA):
            self.ynew[i] = y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i]
                                       + B5 * k5[i] + B6 * k6[i])
        rhs_aug(self.ynew, mode, &self.p, k7)
        self.nfev += 5 + 1
        for i in range(NA):
            self.err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i]
                               + E6 * k6[i] + E7 * k7[i])

    cdef double error_norm(self, const double* y, double rtol, double atol):
        cdef int i
        cdef double sk, acc = 0.0, a, b
        for i in range(NA):
            a = fabs(y[i])
            b = fabs(self.ynew[i])
            sk = atol + rtol * (a if a > b else b)
            acc += (self.err[i] / sk) * (self.err[i] / sk)
        return sqrt(acc / NA)


cdef inline bint all_finite(const double* y, int n):
    cdef int i
    for i in range(n):
        if not isfinite(y[i]):
            return False
    return True


def integrate_augmented(double[::1] y0, double duration, double c1, double c2, double alpha,
                        double mu, double rtol=1e-12, double atol=1e-12, double h0=0.0,
                        long max_steps=1000000, bint record=True):
    """Integrate the state/costate system under the optimal control law.

    Returns ``(status, ts, ys, nfev)``; ``ys`` has one row per recorded node.
    """
    cdef _Stepper st = _Stepper()
    cdef double y[NA]
    cdef double ylo[NA]
    cdef double t = 0.0, h, hnew, errn, err_old = 1e-4, fac, g_lo, g_hi, h_lo, h_hi, h_mid
    cdef double g_mid, hmin
    cdef int i, mode, end_mode, new_mode, side, it
    cdef int status = OK
    cdef long nsteps = 0
    cdef bint have_k1 = False, rejected = False, last
    cdef list ts_rec = []
    cdef list ys_rec = []
    cdef cnp.ndarray[cnp.float64_t, ndim=1] row

    st.p.c1 = c1
    st.p.c2 = c2
    st.p.alpha = alpha
    st.p.mu = mu
    st.nfev = 0
    for i in range(NA):
        y[i] = y0[i]
    h = h0 if h0 > 0.0 else duration / 100.0
    mode = natural_mode(y, &st.p)

    if record:
        ts_rec.append(0.0)
        ys_rec.append(np.asarray(<double[:NA]> y).copy())

    while t < duration:
        if nsteps >= max_steps:
            status = MAX_STEPS
            break
        last = False
        if t + h >= duration:
            h = duration - t
            last = True
        hmin = 1e-15 * (fabs(t) if fabs(t) > 1.0 else 1.0)
        if h < hmin:
            status = MASS_DEPLETED if y[6] <= MASS_FLOOR * y0[6] else STEP_UNDERFLOW
            break
        st.stages(y, h, mode, have_k1)
        errn = st.error_norm(y, rtol, atol)
        if not isfinite(errn):
            have_k1 = True
            h *= 0.2
            rejected = True
            if h < hmin:
                status = MASS_DEPLETED if y[6] <= MASS_FLOOR * y0[6] else NONFINITE
                break
            continue
        if errn > 1.0:
            fac = 0.9 * pow(errn, -0.2)
            if fac < 0.2:
                fac = 0.2
            h *= fac
            have_k1 = True
            rejected = True
            continue

        nsteps += 1
        end_mode = natural_mode(st.ynew, &st.p)
        if end_mode != mode:
            # locate the switch by bracketing on step length, frozen dynamics
            h_lo = 0.0
            h_hi = h
            g_lo = event_value(y, &st.p, mode, end_mode)
            g_hi = event_value(st.ynew, &st.p, mode, end_mode)
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
                st.stages(y, h_mid, mode, True)
                g_mid = event_value(st.ynew, &st.p, mode, end_mode)
                if natural_mode(st.ynew, &st.p) == mode:
                    h_lo = h_mid
                    g_lo = g_mid
                    for i in range(NA):
                        ylo[i] = st.ynew[i]
                    if side == -1:
                        g_hi *= 0.5
                    side = -1
                else:
                    h_hi = h_mid
                    g_hi = g_mid
                    if side == 1:
                        g_lo *= 0.5
                    side = 1
            # state at the far edge decides the new mode
            st.stages(y, h_hi, mode, True)
            new_mode = natural_mode(st.ynew, &st.p)
            if h_lo > 0.0:
                for i in range(NA):
                    y[i] = ylo[i]
                t += h_lo
                if not all_finite(y, NA):
                    status = NONFINITE
                    break
                if record:
                    ts_rec.append(t)
                    ys_rec.append(np.asarray(<double[:NA]> y).copy())
                if y[6] <= 0.0:
                    status = MASS_DEPLETED
                    break
            mode = new_mode
            have_k1 = False
            rejected = False
            if h_lo > 0.0 and t >= duration:
                break
            continue

        for i in range(NA):
            y[i] = st.ynew[i]
            st.k[0][i] = st.k[6][i]
        have_k1 = True
        if last:
            t = duration
        else:
            t += h
        if not all_finite(y, NA):
            status = NONFINITE
            break
        if record or last:
            ts_rec.append(t)
            ys_rec.append(np.asarray(<double[:NA]> y).copy())
        if y[6] <= 0.0:
            status = MASS_DEPLETED
            break

        # PI step-size control
        if errn < 1e-10:
            errn = 1e-10
        fac = 0.9 * pow(errn, -0.17) * pow(err_old, 0.04)
        if fac > 10.0:
            fac = 10.0
        if fac < 0.2:
            fac = 0.2
        if rejected and fac > 1.0:
            fac = 1.0
        err_old = errn
        hnew = h * fac
        rejected = False
        h = hnew

    if not record:
        if len(ts_rec) == 0 or ts_rec[len(ts_rec) - 1] != t:
            ts_rec.append(t)
            ys_rec.append(np.asarray(<double[:NA]> y).copy())
        ts_rec.insert(0, 0.0)
        ys_rec.insert(0, np.asarray(y0).copy())
    elif ts_rec[len(ts_rec) - 1] != t:
        ts_rec.append(t)
        ys_rec.append(np.asarray(<double[:NA]> y).copy())
    return status, np.array(ts_rec), np.array(ys_rec), st.nfev


def integrate_thrust(double[::1] y0, double duration, double ux, double uy, double uz,
                     double c1, double c2, double mu, double rtol=1e-12, double atol=1e-12,
                     double h0=0.0, long max_steps=1000000):
    """Integrate the 7-element state under a constant thrust vector ``u * dir``.

    Returns ``(status, y_final, nfev)``.
    """
    cdef double y[NS]
    cdef double yt[NS]
    cdef double yn[NS]
    cdef double e[NS]
    cdef double k[7][NS]
    cdef double thrust[3]
    cdef double t = 0.0, h, errn, err_old = 1e-4, fac, sk, a, b, acc, hmin
    cdef double un = sqrt(ux * ux + uy * uy + uz * uz)
    cdef double c2u = c2 * un
    cdef int i, status = OK
    cdef long nfev = 0, nsteps = 0
    cdef bint have_k1 = False, rejected = False, last
    thrust[0] = ux
    thrust[1] = uy
    thrust[2] = uz
    for i in range(NS):
        y[i] = y0[i]
    h = h0 if h0 > 0.0 else duration / 100.0
    while t < duration:
        if nsteps >= max_steps:
            status = MAX_STEPS
            break
        last = False
        if t + h >= duration:
            h = duration - t
            last = True
        hmin = 1e-15 * (fabs(t) if fabs(t) > 1.0 else 1.0)
        if h < hmin:
            status = MASS_DEPLETED if y[6] <= MASS_FLOOR * y0[6] else STEP_UNDERFLOW
            break
        if not have_k1:
            rhs_thrust(y, thrust, c1, c2u, mu, k[0])
            nfev += 1
        for i in range(NS):
            yt[i] = y[i] + h * A21 * k[0][i]
        rhs_thrust(yt, thrust, c1, c2u, mu, k[1])
        for i in range(NS):
            yt[i] = y[i] + h * (A31 * k[0][i] + A32 * k[1][i])
        rhs_thrust(yt, thrust, c1, c2u, mu, k[2])
        for i in range(NS):
            yt[i] = y[i] + h * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i])
        rhs_thrust(yt, thrust, c1, c2u, mu, k[3])
        for i in range(NS):
            yt[i] = y[i] + h * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i])
        rhs_thrust(yt, thrust, c1, c2u, mu, k[4])
        for i in range(NS):
            yt[i] = y[i] + h * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i]
                                + A64 * k[3][i] + A65 * k[4][i])
        rhs_thrust(yt, thrust, c1, c2u, mu, k[5])
        for i in range(NS):
            yn[i] = y[i] + h * (B1 * k[0][i] + B3 * k[2][i] + B4 * k[3][i]
                                + B5 * k[4][i] + B6 * k[5][i])
        rhs_thrust(yn, thrust, c1, c2u, mu, k[6])
        nfev += 6
        acc = 0.0
        for i in range(NS):
            e[i] = h * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i]
                        + E6 * k[5][i] + E7 * k[6][i])
            a = fabs(y[i])
            b = fabs(yn[i])
            sk = atol + rtol * (a if a > b else b)
            acc += (e[i] / sk) * (e[i] / sk)
        errn = sqrt(acc / NS)
        if not isfinite(errn):
            status = MASS_DEPLETED if y[6] <= MASS_FLOOR * y0[6] else NONFINITE
            break
        if errn > 1.0:
            fac = 0.9 * pow(errn, -0.2)
            if fac < 0.2:
                fac = 0.2
            h *= fac
            have_k1 = True
            rejected = True
            continue
        nsteps += 1
        for i in range(NS):
            y[i] = yn[i]
            k[0][i] = k[6][i]
        have_k1 = True
        t = duration if last else t + h
        if y[6] <= 0.0:
            status = MASS_DEPLETED
            break
        if errn < 1e-10:
            errn = 1e-10
        fac = 0.9 * pow(errn, -0.17) * pow(err_old, 0.04)
        if fac > 10.0:
            fac = 10.0
        if fac < 0.2:
            fac = 0.2
        if rejected and fac > 1.0:
            fac = 1.0
        err_old = errn
        rejected = False
        h *= fac
    return status, np.asarray(<double[:NS]> y).copy(), nfev
