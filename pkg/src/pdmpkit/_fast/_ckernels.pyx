# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled gene-model kernels: hazard inversion, cumulative hazard, chain.

Mirrors ``_pykernels`` step for step; see that module for the contract.
"""
import numpy as np

from libc.math cimport exp, pow, fabs, NAN, isfinite

cdef double C2 = 1.0 / 5, C3 = 3.0 / 10, C4 = 4.0 / 5, C5 = 8.0 / 9
cdef double B1 = 35.0 / 384, B3 = 500.0 / 1113, B4 = 125.0 / 192
cdef double B5 = -2187.0 / 6784, B6 = 11.0 / 84
cdef double E1 = 71.0 / 57600, E3 = -71.0 / 16695, E4 = 71.0 / 1920
cdef double E5 = -17253.0 / 339200, E6 = 22.0 / 525, E7 = -1.0 / 40
cdef double SAFETY = 0.9, MIN_FACTOR = 0.2, MAX_FACTOR = 5.0
cdef double ROOT_RTOL = 1e-10
cdef long MAX_ITER = 1000000


cdef struct Params:
    double g1, g2, ratio, k1, k2, k3, n


cdef Params _params(P):
    cdef Params p
    p.g1 = P[0]
    p.g2 = P[1]
    p.ratio = P[2] / (P[0] - P[1])
    p.k1 = P[4]
    p.k2 = P[5]
    p.k3 = P[6]
    p.n = P[7]
    return p


cdef inline double rate(double x1, double x2, double s, Params* p) nogil:
    cdef double e2 = exp(-p.g2 * s)
    cdef double y2 = x2 * e2 + x1 * p.ratio * (e2 - exp(-p.g1 * s))
    cdef double z
    if y2 < 0.0:
        y2 = 0.0
    z = pow(y2, p.n)
    return (p.k1 + p.k2 * z) / (1.0 + p.k3 * z)


cdef inline double factor(double err) nogil:
    cdef double f
    if err == 0.0:
        return MAX_FACTOR
    f = SAFETY * pow(err, -0.2)
    if f < MIN_FACTOR:
        return MIN_FACTOR
    if f > MAX_FACTOR:
        return MAX_FACTOR
    return f


cdef inline double step(double x1, double x2, double t, double lam, double h,
                        double k1, Params* p, double* err, double* k7) nogil:
    # the hazard integrand depends on time only, so stages need no state
    cdef double k2 = rate(x1, x2, t + C2 * h, p)
    cdef double k3 = rate(x1, x2, t + C3 * h, p)
    cdef double k4 = rate(x1, x2, t + C4 * h, p)
    cdef double k5 = rate(x1, x2, t + C5 * h, p)
    cdef double k6 = rate(x1, x2, t + h, p)
    cdef double lam_new = lam
    lam_new += (h * B1) * k1
    lam_new += (h * B3) * k3
    lam_new += (h * B4) * k4
    lam_new += (h * B5) * k5
    lam_new += (h * B6) * k6
    k7[0] = k6
    cdef double e = 0.0
    e += (h * E1) * k1
    e += (h * E3) * k3
    e += (h * E4) * k4
    e += (h * E5) * k5
    e += (h * E6) * k6
    e += (h * E7) * k6
    err[0] = e
    return lam_new


cdef double locate(double x1, double x2, double t, double lam, double k1,
                   double h, double lam_h, double target, Params* p) nogil:
    cdef double lo = 0.0, hi = h
    cdef double f_lo = lam - target, f_hi = lam_h - target
    cdef double mid, f_mid, dummy_err, dummy_k
    cdef int side = 0, it
    for it in range(200):
        if f_hi == 0.0 or hi - lo <= ROOT_RTOL * (t + hi):
            break
        mid = hi - f_hi * (hi - lo) / (f_hi - f_lo)
        if not (lo < mid and mid < hi):
            mid = 0.5 * (lo + hi)
        f_mid = step(x1, x2, t, lam, mid, k1, p, &dummy_err, &dummy_k) - target
        if f_mid >= 0.0:
            hi = mid
            f_hi = f_mid
            if side == 1:
                f_lo *= 0.5
            side = 1
        else:
            lo = mid
            f_lo = f_mid
            if side == -1:
                f_hi *= 0.5
            side = -1
    return t + hi


cdef double invert_one(double x1, double x2, double target, Params* p,
                       double rtol, double atol, double t_cap) nogil:
    cdef double t = 0.0, lam = 0.0, h, lam_new, err, k7, scale, k1
    cdef long it
    if target <= 0.0:
        return 0.0
    k1 = rate(x1, x2, 0.0, p)
    h = 0.5 * (target if target > 1e-3 else 1e-3) / k1
    for it in range(MAX_ITER):
        lam_new = step(x1, x2, t, lam, h, k1, p, &err, &k7)
        scale = atol + rtol * (fabs(lam) if fabs(lam) > fabs(lam_new) else fabs(lam_new))
        err = fabs(err) / scale
        if err <= 1.0:
            if lam_new >= target:
                return locate(x1, x2, t, lam, k1, h, lam_new, target, p)
            t = t + h
            lam = lam_new
            k1 = k7
            h = h * factor(err)
            if t > t_cap:
                return NAN
        else:
            h = h * (factor(err) if factor(err) < 1.0 else 1.0)
    return NAN


def hazard_invert(x, target, P, double rtol=1e-8, double atol=1e-10, double t_cap=1e9):
    cdef double[:, :] xv = np.ascontiguousarray(x, dtype=float)
    cdef double[:] tv = np.ascontiguousarray(target, dtype=float)
    cdef Params p = _params(P)
    cdef Py_ssize_t i, n = tv.shape[0]
    out = np.empty(n)
    cdef double[:] ov = out
    with nogil:
        for i in range(n):
            ov[i] = invert_one(xv[i, 0], xv[i, 1], tv[i], &p, rtol, atol, t_cap)
    return out


def cumulative_hazard(x, t_end, P, double rtol=1e-8, double atol=1e-10):
    cdef double[:, :] xv = np.ascontiguousarray(x, dtype=float)
    cdef double[:] tev = np.array(
        np.broadcast_to(np.asarray(t_end, dtype=float), (xv.shape[0],)), dtype=float)
    cdef Params p = _params(P)
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef double t, lam, h, k1, lam_new, err, k7, scale, te
    cdef long it
    cdef bint last
    out = np.zeros(n)
    cdef double[:] ov = out
    with nogil:
        for i in range(n):
            te = tev[i]
            if te <= 0.0:
                continue
            t = 0.0
            lam = 0.0
            k1 = rate(xv[i, 0], xv[i, 1], 0.0, &p)
            h = 0.5 * (te if te > 1e-3 else 1e-3) / k1
            if h > te:
                h = te
            for it in range(MAX_ITER):
                last = t + h >= te
                if last:
                    h = te - t
                lam_new = step(xv[i, 0], xv[i, 1], t, lam, h, k1, &p, &err, &k7)
                scale = atol + rtol * (fabs(lam) if fabs(lam) > fabs(lam_new) else fabs(lam_new))
                err = fabs(err) / scale
                if err <= 1.0:
                    t = te if last else t + h
                    lam = lam_new
                    k1 = k7
                    if last:
                        break
                    h = h * factor(err)
                else:
                    h = h * (factor(err) if factor(err) < 1.0 else 1.0)
            ov[i] = lam
    return out


def chain(x0, targets, thetas, P, double rtol=1e-8, double atol=1e-10, double t_cap=1e9):
    cdef double[:] tg = np.ascontiguousarray(targets, dtype=float)
    cdef double[:] th = np.ascontiguousarray(thetas, dtype=float)
    cdef Params p = _params(P)
    cdef Py_ssize_t k, m = tg.shape[0]
    pre = np.full((m, 2), np.nan)
    post = np.full((m, 2), np.nan)
    tau = np.full(m, np.nan)
    cdef double[:, :] prv = pre
    cdef double[:, :] pov = post
    cdef double[:] tav = tau
    cdef double x1 = float(x0[0]), x2 = float(x0[1]), s, e1, e2, y1, y2
    with nogil:
        for k in range(m):
            s = invert_one(x1, x2, tg[k], &p, rtol, atol, t_cap)
            tav[k] = s
            if not isfinite(s):
                break
            e1 = exp(-p.g1 * s)
            e2 = exp(-p.g2 * s)
            y1 = x1 * e1
            y2 = x2 * e2 + x1 * p.ratio * (e2 - e1)
            if y2 < 0.0:
                y2 = 0.0
            prv[k, 0] = y1
            prv[k, 1] = y2
            x1 = y1 + th[k]
            x2 = y2
            pov[k, 0] = x1
            pov[k, 1] = x2
    return pre, post, tau
