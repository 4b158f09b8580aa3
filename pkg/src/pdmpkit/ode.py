"""Dormand-Prince 5(4) integration with hazard-crossing location.

The integrator works on small state vectors (a flow state augmented with the
cumulative hazard) and is written for scalar use from Python.  The compiled
kernels in :mod:`pdmpkit._fast` implement the same step, controller and
root-finding so the two paths agree to rounding.
"""

import numpy as np

C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
B = A[6] + (0.0,)
# difference between the 5th and embedded 4th order weights
E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0
ROOT_RTOL = 1e-10
MAX_STEPS = 10**6


class IntegrationError(RuntimeError):
    pass


def dopri_step(rhs, t, y, h, k1):
    """One DP5 step of size ``h`` from ``(t, y)`` with first stage ``k1``.

    Returns ``(y_new, err, k7)`` where ``err`` is the embedded error vector
    and ``k7`` is the derivative at the new point (first-same-as-last).
    """
    ks = [k1]
    for i in range(1, 7):
        yi = y.copy()
        for j, a in enumerate(A[i]):
            if a != 0.0:
                yi += (h * a) * ks[j]
        ks.append(rhs(t + C[i] * h, yi))
    y_new = yi  # stage 7 is evaluated at the 5th order solution
    err = np.zeros_like(y)
    for j, e in enumerate(E):
        if e != 0.0:
            err += (h * e) * ks[j]
    return y_new, err, ks[6]


def error_norm(err, y, y_new, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
    return float(np.max(np.abs(err) / scale))


def step_factor(err):
    if err == 0.0:
        return MAX_FACTOR
    return min(MAX_FACTOR, max(MIN_FACTOR, SAFETY * err ** -0.2))


def integrate(rhs, y0, t_end, rtol=1e-8, atol=1e-10, h0=None):
    """Integrate ``y' = rhs(t, y)`` from 0 to ``t_end``; return ``y(t_end)``."""
    y = np.array(y0, dtype=float)
    if t_end == 0.0:
        return y
    t = 0.0
    k1 = rhs(t, y)
    h = t_end if h0 is None else min(h0, t_end)
    for _ in range(MAX_STEPS):
        last = t + h >= t_end
        if last:
            h = t_end - t
        y_new, err_vec, k7 = dopri_step(rhs, t, y, h, k1)
        err = error_norm(err_vec, y, y_new, rtol, atol)
        if err <= 1.0:
            t = t_end if last else t + h
            y, k1 = y_new, k7
            if last:
                return y
            h *= step_factor(err)
        else:
            h *= min(1.0, step_factor(err))
    raise IntegrationError("step limit reached before t_end")


def initial_step(rate0, target, speed=0.0, size=1.0):
    """Initial step from the hazard scale and, if given, the flow speed."""
    h = 0.5 * max(target, 1e-3) / rate0 if rate0 > 0.0 else 1.0
    if speed > 0.0:
        h = min(h, 0.1 * (1.0 + size) / speed)
    return h


def integrate_until(rhs, y0, index, target, rtol=1e-8, atol=1e-10, h0=1.0,
                    t_cap=1e9):
    """Integrate until the nondecreasing coordinate ``index`` reaches ``target``.

    The crossing step is located by re-stepping from the start of the final
    accepted step with a bracketed Illinois iteration on the step size, to
    relative accuracy ``ROOT_RTOL`` in time.

    Returns ``(t_cross, y_cross)``.  Raises :class:`IntegrationError` if
    the coordinate has not reached ``target`` by ``t_cap``.
    """
    y = np.array(y0, dtype=float)
    if y[index] >= target:
        return 0.0, y
    t = 0.0
    k1 = rhs(t, y)
    h = h0
    for _ in range(MAX_STEPS):
        y_new, err_vec, k7 = dopri_step(rhs, t, y, h, k1)
        err = error_norm(err_vec, y, y_new, rtol, atol)
        if err <= 1.0:
            if y_new[index] >= target:
                return locate(rhs, t, y, k1, h, y_new, index, target)
            t += h
            y, k1 = y_new, k7
            if t > t_cap:
                raise IntegrationError(
                    f"hazard target {target:g} not reached by t={t_cap:g}")
            h *= step_factor(err)
        else:
            h *= min(1.0, step_factor(err))
    raise IntegrationError("step limit reached while locating crossing")


def locate(rhs, t, y, k1, h, y_new, index, target):
    lo, hi = 0.0, h
    f_lo, f_hi = y[index] - target, y_new[index] - target
    y_hi = y_new
    side = 0
    for _ in range(200):
        if f_hi == 0.0 or hi - lo <= ROOT_RTOL * (t + hi):
            break
        mid = hi - f_hi * (hi - lo) / (f_hi - f_lo)
        if not lo < mid < hi:
            mid = 0.5 * (lo + hi)
        y_mid = dopri_step(rhs, t, y, mid, k1)[0]
        f_mid = y_mid[index] - target
        if f_mid >= 0.0:
            hi, f_hi, y_hi = mid, f_mid, y_mid
            if side == 1:
                f_lo *= 0.5
            side = 1
        else:
            lo, f_lo = mid, f_mid
            if side == -1:
                f_hi *= 0.5
            side = -1
    return t + hi, y_hi


def gauss_legendre(a, b, panels, order):
    """Composite Gauss-Legendre nodes and weights on ``[a, b]``."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def cumulative_integral(f, nodes, order=8):
    """Integrals of ``f`` over ``[0, s]`` for each sorted node ``s``.

    Each gap between consecutive nodes is integrated with a fixed-order
    Gauss-Legendre rule; ``f`` must accept arrays of times.
    """
    nodes = np.asarray(nodes, dtype=float)
    left = np.concatenate(([0.0], nodes[:-1]))
    x, w = np.polynomial.legendre.leggauss(order)
    half = 0.5 * (nodes - left)
    mid = 0.5 * (nodes + left)
    pts = mid[:, None] + half[:, None] * x[None, :]
    vals = f(pts)
    return np.cumsum((vals * w[None, :]).sum(axis=1) * half)

