"""Pure-Python/numpy versions of the compiled gene-model kernels.

Same step sequence as ``_ckernels.pyx``: Dormand-Prince 5(4) on the hazard
``Lambda' = phi(pi_s x)`` with the closed-form flow, Illinois location of
the crossing inside the last accepted step.  Batch routines run all
elements in lockstep with per-element step sizes; they use numpy's
vectorised ``exp``, which may differ from libm in the last bit, so batch
results match the compiled ones to the crossing tolerance.  The scalar
chain uses ``math`` and matches bitwise.

Parameter vector layout: ``gamma1, gamma2, beta2, b, kappa1, kappa2,
kappa3, N``.
"""
import math

import numpy as np

from ..ode import B, C, E, MAX_FACTOR, MIN_FACTOR, ROOT_RTOL, SAFETY

_B = B[:6]
MAX_ITER = 10**6


def _rate(x1, x2, s, P):
    g1, g2, beta, _, k1, k2, k3, n = P
    ratio = beta / (g1 - g2)
    y2 = x2 * np.exp(-g2 * s) + x1 * ratio * (np.exp(-g2 * s) - np.exp(-g1 * s))
    z = np.power(np.maximum(y2, 0.0), n)
    return (k1 + k2 * z) / (1.0 + k3 * z)


def _step(x1, x2, t, lam, h, k1, P):
    ks = [k1]
    for i in range(1, 7):
        ks.append(_rate(x1, x2, t + C[i] * h, P))
    lam_new = lam.copy()
    for j, b in enumerate(_B):
        if b != 0.0:
            lam_new += (h * b) * ks[j]
    err = np.zeros_like(lam)
    for j, e in enumerate(E):
        if e != 0.0:
            err += (h * e) * ks[j]
    return lam_new, err, ks[6]


def _factor(err):
    with np.errstate(divide="ignore"):
        f = SAFETY * np.power(err, -0.2)
    f = np.where(err == 0.0, MAX_FACTOR, f)
    return np.minimum(MAX_FACTOR, np.maximum(MIN_FACTOR, f))


def hazard_invert(x, target, P, rtol=1e-8, atol=1e-10, t_cap=1e9):
    """Times ``tau`` with ``Lambda_x(tau) = target`` for a batch of starts.

    ``x`` has shape ``(n, 2)``.  Elements whose hazard does not reach the
    target by ``t_cap`` come back as ``nan``.
    """
    x = np.asarray(x, dtype=float)
    target = np.asarray(target, dtype=float)
    n = len(target)
    P = tuple(float(v) for v in P)
    x1, x2 = x[:, 0].copy(), x[:, 1].copy()
    tau = np.full(n, np.nan)
    zero = target <= 0.0
    tau[zero] = 0.0
    idx = np.flatnonzero(~zero)
    x1, x2, tgt = x1[idx], x2[idx], target[idx]
    t = np.zeros(len(idx))
    lam = np.zeros(len(idx))
    k1 = _rate(x1, x2, t, P)
    h = 0.5 * np.maximum(tgt, 1e-3) / k1
    hit_t = np.zeros(len(idx))
    hit_h = np.zeros(len(idx))
    hit_lam = np.zeros(len(idx))
    hit_k1 = np.zeros(len(idx))
    hit_new = np.zeros(len(idx))
    active = np.ones(len(idx), dtype=bool)
    crossed = np.zeros(len(idx), dtype=bool)
    for _ in range(MAX_ITER):
        a = np.flatnonzero(active)
        if len(a) == 0:
            break
        lam_new, err_vec, k7 = _step(x1[a], x2[a], t[a], lam[a], h[a], k1[a], P)
        scale = atol + rtol * np.maximum(np.abs(lam[a]), np.abs(lam_new))
        err = np.abs(err_vec) / scale
        ok = err <= 1.0
        cross = ok & (lam_new >= tgt[a])
        c = a[cross]
        hit_t[c], hit_h[c], hit_lam[c], hit_k1[c], hit_new[c] = (
            t[c], h[a][cross], lam[c], k1[c], lam_new[cross])
        crossed[c] = True
        active[c] = False
        move = ok & ~cross
        m = a[move]
        t[m] = t[m] + h[m]
        lam[m] = lam_new[move]
        k1[m] = k7[move]
        fac = _factor(err)
        h[a] = np.where(ok, h[a] * fac, h[a] * np.minimum(1.0, fac))
        capped = m[t[m] > t_cap]
        active[capped] = False
    c = np.flatnonzero(crossed)
    if len(c):
        tau[idx[c]] = _locate(x1[c], x2[c], hit_t[c], hit_lam[c], hit_k1[c], hit_h[c],
                              hit_new[c], tgt[c], P)
    return tau


def _locate(x1, x2, t, lam, k1, h, lam_h, target, P):
    lo = np.zeros_like(h)
    hi = h.copy()
    f_lo = lam - target
    f_hi = lam_h - target
    side = np.zeros(len(h), dtype=int)
    live = np.ones(len(h), dtype=bool)
    for _ in range(200):
        live &= ~((f_hi == 0.0) | (hi - lo <= ROOT_RTOL * (t + hi)))
        a = np.flatnonzero(live)
        if len(a) == 0:
            break
        mid = hi[a] - f_hi[a] * (hi[a] - lo[a]) / (f_hi[a] - f_lo[a])
        bad = ~((lo[a] < mid) & (mid < hi[a]))
        mid = np.where(bad, 0.5 * (lo[a] + hi[a]), mid)
        f_mid = _step(x1[a], x2[a], t[a], lam[a], mid, k1[a], P)[0] - target[a]
        up = f_mid >= 0.0
        u, d = a[up], a[~up]
        hi[u], f_hi[u] = mid[up], f_mid[up]
        f_lo[u] = np.where(side[u] == 1, 0.5 * f_lo[u], f_lo[u])
        side[u] = 1
        lo[d], f_lo[d] = mid[~up], f_mid[~up]
        f_hi[d] = np.where(side[d] == -1, 0.5 * f_hi[d], f_hi[d])
        side[d] = -1
    return t + hi


def cumulative_hazard(x, t_end, P, rtol=1e-8, atol=1e-10):
    """``Lambda_x(t_end)`` for a batch of starts and end times."""
    x = np.asarray(x, dtype=float)
    t_end = np.broadcast_to(np.asarray(t_end, dtype=float), (len(x),)).copy()
    P = tuple(float(v) for v in P)
    x1, x2 = x[:, 0].copy(), x[:, 1].copy()
    n = len(x)
    t = np.zeros(n)
    lam = np.zeros(n)
    k1 = _rate(x1, x2, t, P)
    h = np.minimum(t_end, 0.5 * np.maximum(t_end, 1e-3) / k1)
    active = t_end > 0.0
    for _ in range(MAX_ITER):
        a = np.flatnonzero(active)
        if len(a) == 0:
            break
        last = t[a] + h[a] >= t_end[a]
        h[a] = np.where(last, t_end[a] - t[a], h[a])
        lam_new, err_vec, k7 = _step(x1[a], x2[a], t[a], lam[a], h[a], k1[a], P)
        scale = atol + rtol * np.maximum(np.abs(lam[a]), np.abs(lam_new))
        err = np.abs(err_vec) / scale
        ok = err <= 1.0
        m = a[ok]
        t[m] = np.where(last[ok], t_end[m], t[m] + h[m])
        lam[m] = lam_new[ok]
        k1[m] = k7[ok]
        active[a[ok & last]] = False
        fac = _factor(err)
        h[a] = np.where(ok, h[a] * fac, h[a] * np.minimum(1.0, fac))
    return lam


def _rate_scalar(x1, x2, s, P):
    g1, g2, ratio, k1, k2, k3, n = P
    e2 = math.exp(-g2 * s)
    y2 = x2 * e2 + x1 * ratio * (e2 - math.exp(-g1 * s))
    z = max(y2, 0.0) ** n
    return (k1 + k2 * z) / (1.0 + k3 * z)


def _step_scalar(x1, x2, t, lam, h, k1, P):
    k3 = _rate_scalar(x1, x2, t + C[2] * h, P)
    k4 = _rate_scalar(x1, x2, t + C[3] * h, P)
    k5 = _rate_scalar(x1, x2, t + C[4] * h, P)
    k6 = _rate_scalar(x1, x2, t + h, P)
    lam_new = lam
    for b, k in ((_B[0], k1), (_B[2], k3), (_B[3], k4), (_B[4], k5), (_B[5], k6)):
        lam_new += (h * b) * k
    err = 0.0
    for e, k in ((E[0], k1), (E[2], k3), (E[3], k4), (E[4], k5), (E[5], k6), (E[6], k6)):
        err += (h * e) * k
    return lam_new, err, k6


def _invert_scalar(x1, x2, target, P, rtol, atol, t_cap):
    if target <= 0.0:
        return 0.0
    t = lam = 0.0
    k1 = _rate_scalar(x1, x2, 0.0, P)
    h = 0.5 * max(target, 1e-3) / k1
    for _ in range(MAX_ITER):
        lam_new, err, k7 = _step_scalar(x1, x2, t, lam, h, k1, P)
        err = abs(err) / (atol + rtol * max(abs(lam), abs(lam_new)))
        fac = MAX_FACTOR if err == 0.0 else min(MAX_FACTOR, max(MIN_FACTOR, SAFETY * err ** -0.2))
        if err <= 1.0:
            if lam_new >= target:
                return _locate_scalar(x1, x2, t, lam, k1, h, lam_new, target, P)
            t += h
            lam, k1 = lam_new, k7
            h *= fac
            if t > t_cap:
                return math.nan
        else:
            h *= min(1.0, fac)
    return math.nan


def _locate_scalar(x1, x2, t, lam, k1, h, lam_h, target, P):
    lo, hi = 0.0, h
    f_lo, f_hi = lam - target, lam_h - target
    side = 0
    for _ in range(200):
        if f_hi == 0.0 or hi - lo <= ROOT_RTOL * (t + hi):
            break
        mid = hi - f_hi * (hi - lo) / (f_hi - f_lo)
        if not lo < mid < hi:
            mid = 0.5 * (lo + hi)
        f_mid = _step_scalar(x1, x2, t, lam, mid, k1, P)[0] - target
        if f_mid >= 0.0:
            hi, f_hi = mid, f_mid
            if side == 1:
                f_lo *= 0.5
            side = 1
        else:
            lo, f_lo = mid, f_mid
            if side == -1:
                f_hi *= 0.5
            side = -1
    return t + hi


def chain(x0, targets, thetas, P, rtol=1e-8, atol=1e-10, t_cap=1e9):
    """Run the embedded chain for ``len(targets)`` steps.

    ``targets`` are the standard-exponential hazard levels and ``thetas``
    the burst sizes.  Returns ``(pre, post, tau)``; a ``nan`` in ``tau``
    marks a step whose hazard never reached its target (the chain stops
    there).
    """
    g1, g2, beta, _, k1, k2, k3, n = (float(v) for v in P)
    ratio = beta / (g1 - g2)
    Q = (g1, g2, ratio, k1, k2, k3, n)
    m = len(targets)
    pre = np.full((m, 2), np.nan)
    post = np.full((m, 2), np.nan)
    tau = np.full(m, np.nan)
    x1, x2 = float(x0[0]), float(x0[1])
    targets = [float(v) for v in targets]
    thetas = [float(v) for v in thetas]
    for k in range(m):
        s = _invert_scalar(x1, x2, targets[k], Q, rtol, atol, t_cap)
        tau[k] = s
        if not math.isfinite(s):
            break
        e1, e2 = math.exp(-g1 * s), math.exp(-g2 * s)
        y1 = x1 * e1
        y2 = max(x2 * e2 + x1 * ratio * (e2 - e1), 0.0)
        pre[k] = (y1, y2)
        x1, x2 = y1 + thetas[k], y2
        post[k] = (x1, x2)
    return pre, post, tau
