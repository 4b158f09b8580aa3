"""Composed jump maps and quadrature oracles for the embedded-chain kernel.

For ``n = 1`` the chain kernel is

    K(x, B) = int_0^inf int_Theta 1_B(T_(theta,s)(x)) k_(theta,s)(x) nu(dtheta) ds

with ``T_(theta,s)(x) = T_theta(pi_s x)`` and
``k_(theta,s)(x) = p_theta(pi_s x) phi(pi_s x) exp(-Lambda_x(s))``.  The
oracles replace both integrals by composite Gauss-Legendre rules on a
truncated box, giving a weighted cloud of image points; probabilities of
cell sets are cloud weights falling into the cells.  Every result carries a
truncation bound and a discretisation estimate: the larger change against a
half-resolution rerun and against a two-thirds rerun.  The second rule's
nodes are not nested in the first, so a cell edge that sits at the same
relative position inside a panel at both dyadic resolutions (where the two
binning errors coincide) is still seen.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import ode
from .core import PdmpModel, UnboundedThetaError, cumulative_hazard, flow_at
from .grid import GridSpec

CHUNK = 2_000_000
DROP = 1e-7


def single_map(model: PdmpModel, theta, s, x):
    """``T_(theta,s)(x) = T_theta(pi_s x)``."""
    if s < 0:
        raise ValueError("s must be nonnegative")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    y = flow_at(model, x, s)
    return np.asarray(model.jumps.transform(theta, y), dtype=float)


def single_weight(model: PdmpModel, theta, s, x):
    """``k_(theta,s)(x)``, the joint density of ``(theta, t_1)``."""
    if s < 0:
        raise ValueError("s must be nonnegative")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    y = flow_at(model, x, s)
    p = float(model.jumps.weight(theta, y))
    return p * float(model.intensity.rate(y)) * math.exp(-cumulative_hazard(model, x, s))


@dataclass(frozen=True)
class ComposedJumpMap:
    """``T_(theta^n, s^n)`` and ``k_(theta^n, s^n)``, applied right to left."""

    model: PdmpModel
    thetas: tuple = ()
    times: tuple = ()

    def __post_init__(self):
        if len(self.thetas) != len(self.times):
            raise ValueError("need one time per parameter")
        object.__setattr__(self, "thetas", tuple(np.atleast_1d(np.asarray(t, dtype=float))
                                                 for t in self.thetas))
        object.__setattr__(self, "times", tuple(float(s) for s in self.times))

    def __len__(self):
        return len(self.times)

    def extend(self, theta, s):
        return ComposedJumpMap(self.model, self.thetas + (theta,), self.times + (s,))

    def states(self, x):
        """``[y_0 = x, y_1, ..., y_n]`` with ``y_k = T_(theta_k,s_k)(y_{k-1})``."""
        ys = [np.asarray(x, dtype=float)]
        for th, s in zip(self.thetas, self.times):
            ys.append(single_map(self.model, th, s, ys[-1]))
        return ys

    def evaluate(self, x):
        return self.states(x)[-1]

    def weight(self, x):
        ys = self.states(x)
        w = 1.0
        for k, (th, s) in enumerate(zip(self.thetas, self.times)):
            w *= single_weight(self.model, th, s, ys[k])
        return w


# --------------------------------------------------------------------------
# quadrature clouds

@dataclass(frozen=True)
class QuadratureSpec:
    """Truncation level ``eps`` and composite Gauss-Legendre sizes.

    ``s_panels``/``theta_panels`` panels of ``order`` nodes each cover
    ``[0, S_max]`` and the truncated parameter box.
    """

    eps: float = 1e-6
    s_panels: int = 1024
    theta_panels: int = 512
    order: int = 2

    def halved(self):
        return self.scaled(1, 2)

    def scaled(self, num, den):
        return QuadratureSpec(self.eps, max(1, self.s_panels * num // den),
                              max(1, self.theta_panels * num // den), self.order)

    def coarser(self):
        """Rules whose disagreement with ``self`` estimates the discretisation error."""
        return (self.halved(), self.scaled(2, 3))

    def to_dict(self):
        return {"eps": self.eps, "s_panels": self.s_panels,
                "theta_panels": self.theta_panels, "order": self.order}


def s_horizon(model: PdmpModel, x, eps):
    """``S_max`` with ``exp(-Lambda_x(S_max)) <= eps``.

    Uses the declared lower intensity bound when there is one, otherwise
    doubles a trial horizon until the hazard is large enough.
    """
    level = -math.log(eps)
    lo = model.intensity.lower
    if lo is not None and lo > 0:
        return level / lo
    S = 1.0
    while cumulative_hazard(model, x, S) < level:
        S *= 2.0
        if S > 1e9:
            raise UnboundedThetaError("hazard does not reach the truncation level")
    return S


def _flow_hazard(model, X, s):
    """States ``pi_s x`` and hazards ``Lambda_x(s)`` for starts ``X`` (m, d)
    and sorted nodes ``s`` (S,)."""
    m, d = X.shape
    flow = model.flow
    if model.vectorized and flow.closed_form is not None:
        Y = model.flow.closed_form(X[:, None, :], s[None, :])
        Y = np.maximum(Y, np.asarray(model.space.lower, float)) if model.space.lower is not None else Y
        if model.intensity.constant_along_flow:
            Lam = np.asarray(model.intensity.rate(X), float).reshape(m, 1) * s[None, :]
        else:
            q, w = np.polynomial.legendre.leggauss(8)
            left = np.concatenate(([0.0], s[:-1]))
            half = 0.5 * (s - left)
            pts = 0.5 * (s + left)[:, None] + half[:, None] * q[None, :]
            Yq = flow.closed_form(X[:, None, None, :], pts[None, :, :])
            vals = np.asarray(model.intensity.rate(Yq), float)
            Lam = np.cumsum((vals * w).sum(axis=-1) * half[None, :], axis=1)
        return Y, Lam
    Y = np.empty((m, len(s), d))
    Lam = np.empty((m, len(s)))
    for i, x in enumerate(X):
        y, lam, prev = x, 0.0, 0.0
        for j, sj in enumerate(s):
            lam += cumulative_hazard(model, y, sj - prev)
            y = flow_at(model, y, sj - prev)
            prev = sj
            Y[i, j], Lam[i, j] = y, lam
    return Y, Lam


def _rates(model, Y):
    if model.vectorized:
        return np.asarray(model.intensity.rate(Y), dtype=float)
    flat = Y.reshape(-1, Y.shape[-1])
    return np.array([model.intensity.rate(y) for y in flat]).reshape(Y.shape[:-1])


def one_step_cloud(model: PdmpModel, X, quad: QuadratureSpec, s_max=None):
    """Weighted image points of one chain step from each start in ``X``.

    Returns ``(points, weights, tail)`` with ``points`` of shape
    ``(m, M, d)``, ``weights`` ``(m, M)`` and ``tail`` an upper bound on the
    mass lost to truncation, per start.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    m, d = X.shape
    if s_max is None:
        s_max = max(s_horizon(model, x, quad.eps) for x in X)
    s, ws = ode.gauss_legendre(0.0, s_max, quad.s_panels, quad.order)
    Y, Lam = _flow_hazard(model, X, s)
    R = _rates(model, Y)
    dens = ws[None, :] * R * np.exp(-Lam)           # (m, S)
    s_tail = np.exp(-Lam[:, -1]) if not np.isscalar(Lam) else np.exp(-Lam)
    jumps = model.jumps
    if jumps.kind == "continuous":
        if jumps.theta_dim != 1:
            raise NotImplementedError("quadrature clouds support one-dimensional Theta")
        lo, hi, th_tail = jumps.theta_box(X[0], quad.eps)
        th, wt = ode.gauss_legendre(lo[0], hi[0], quad.theta_panels, quad.order)
        S, T = len(s), len(th)
        Tb = np.broadcast_to(th[None, None, :, None], (m, S, T, 1))
        Yb = np.broadcast_to(Y[:, :, None, :], (m, S, T, d))
        if model.vectorized:
            P = np.broadcast_to(np.asarray(jumps.weight(Tb, Yb), float), (m, S, T))
            pts = np.asarray(jumps.transform(Tb, Yb), float)
        else:
            P = np.empty((m, S, T))
            pts = np.empty((m, S, T, d))
            for idx in np.ndindex(m, S, T):
                P[idx] = jumps.weight(Tb[idx], Yb[idx])
                pts[idx] = jumps.transform(Tb[idx], Yb[idx])
        W = dens[:, :, None] * wt[None, None, :] * P
        return pts.reshape(m, S * T, d), W.reshape(m, S * T), s_tail + th_tail
    pts_list, w_list = [], []
    for i in range(m):
        pi, wi = [], []
        for j in range(len(s)):
            atoms = np.asarray(jumps.atoms(Y[i, j]), dtype=float).reshape(-1, jumps.theta_dim)
            for a in atoms:
                pi.append(jumps.transform(a, Y[i, j]))
                wi.append(dens[i, j] * float(jumps.weight(a, Y[i, j])))
        pts_list.append(np.asarray(pi, float))
        w_list.append(np.asarray(wi, float))
    M = max(len(w) for w in w_list)
    pts = np.zeros((m, M, d))
    W = np.zeros((m, M))
    for i in range(m):
        pts[i, :len(w_list[i])] = pts_list[i]
        W[i, :len(w_list[i])] = w_list[i]
    return pts, W, s_tail


def _in_boxes(P, boxes):
    hit = np.zeros(P.shape[:-1], dtype=bool)
    for lo, hi in boxes:
        hit |= np.all((P >= np.asarray(lo, float)) & (P < np.asarray(hi, float)), axis=-1)
    return hit


def _as_boxes(B):
    if B is None:
        return None
    if isinstance(B, tuple) and len(B) == 2 and np.ndim(B[0]) == 1 and np.ndim(B[1]) == 1 \
            and not isinstance(B[0], tuple):
        return [B]
    return [(np.asarray(lo, float), np.asarray(hi, float)) for lo, hi in B]


def cells_of(grid: GridSpec, cells):
    """Boxes for the listed flat cell indices of ``grid``."""
    lo, hi = grid.cell_bounds()
    return [(lo[c], hi[c]) for c in np.atleast_1d(cells)]


@dataclass
class OracleResult:
    """Probability estimate with its error budget.

    ``truncation`` bounds the mass cut off by the finite ``s`` and ``theta``
    ranges; ``discretisation`` is the change against a half-resolution rule.
    """

    probability: float
    truncation: float
    discretisation: float
    n: int
    quad: QuadratureSpec = field(default_factory=QuadratureSpec)

    @property
    def error_bound(self):
        return self.truncation + self.discretisation


def _probability(model, x, boxes, n, quad):
    x = np.asarray(x, dtype=float)
    pts, W, tail = one_step_cloud(model, x, quad)
    pts, W = pts[0], W[0]
    tail = float(tail[0])
    if n == 1:
        hit = np.ones(len(W), bool) if boxes is None else _in_boxes(pts, boxes)
        return float(W[hit].sum()), tail
    # stage-one nodes carrying negligible weight are dropped and their
    # mass is added to the truncation budget
    order = np.argsort(W)
    dropped = np.cumsum(W[order]) <= DROP
    tail += float(W[order][dropped].sum())
    keep = order[~dropped]
    pts, W = pts[keep], W[keep]
    s_max = s_horizon(model, pts[0], quad.eps) if model.intensity.lower else None
    if s_max is None:
        raise UnboundedThetaError("two-step oracle needs a positive intensity lower bound")
    total = 0.0
    per = quad.s_panels * quad.order * max(1, quad.theta_panels * quad.order)
    step = max(1, CHUNK // per)
    tail2 = 0.0
    for a in range(0, len(W), step):
        p2, w2, t2 = one_step_cloud(model, pts[a:a + step], quad, s_max)
        hit = np.ones(w2.shape, bool) if boxes is None else _in_boxes(p2, boxes)
        total += float((W[a:a + step, None] * w2 * hit).sum())
        tail2 = max(tail2, float(np.max(t2)))
    return total, tail + tail2


def kernel_oracle(model: PdmpModel, x, B=None, n=1, quad: QuadratureSpec | None = None):
    """``K^n(x, B)`` by tensorised quadrature, ``n`` in ``{1, 2}``.

    ``B`` is a list of ``(lo, hi)`` half-open boxes (``None`` for the whole
    space).
    """
    if n not in (1, 2):
        raise ValueError("quadrature oracles are available for n = 1 and n = 2")
    quad = quad or (QuadratureSpec() if n == 1 else QuadratureSpec(s_panels=48, theta_panels=32))
    boxes = _as_boxes(B)
    p, tail = _probability(model, x, boxes, n, quad)
    disc = max(abs(p - _probability(model, x, boxes, n, q)[0]) for q in quad.coarser())
    return OracleResult(p, tail, disc, n, quad)


def kernel_histogram(model: PdmpModel, x, grid: GridSpec, quad: QuadratureSpec | None = None):
    """Masses of ``K(x, .)`` on every cell of ``grid``.

    Returns ``(masses, truncation, discretisation)``; the last entry of
    ``masses`` holds everything outside the box, including the truncated tail.
    """
    quad = quad or QuadratureSpec()

    def masses(q):
        pts, W, tail = one_step_cloud(model, x, q)
        h = grid.histogram(pts[0], W[0])
        h[-1] += max(0.0, 1.0 - h.sum())
        return h, float(tail[0])

    h, tail = masses(quad)
    return h, tail, max(float(np.abs(h - masses(q)[0]).sum()) for q in quad.coarser())


def chapman_kolmogorov(model: PdmpModel, x, B, grid: GridSpec,
                       quad: QuadratureSpec | None = None,
                       inner: QuadratureSpec | None = None):
    """``K^2(x, B)`` as ``sum_c K(x, c) K(center_c, B)`` over cells ``c``.

    The error budget adds the first-step mass outside ``grid`` (where the
    inner probability is unknown), the inner truncation, and the change
    when ``grid`` is refined once.
    """
    quad = quad or QuadratureSpec()
    inner = inner or QuadratureSpec(s_panels=256, theta_panels=128)
    boxes = _as_boxes(B)
    pts, W, tail = one_step_cloud(model, x, quad)

    def compose(g):
        h = g.histogram(pts[0], W[0])
        cells = np.flatnonzero(h[:-1] > 0)
        centers = g.centers()[cells]
        s_max = s_horizon(model, centers[0], inner.eps)
        probs = np.empty(len(cells))
        per = inner.s_panels * inner.order * max(1, inner.theta_panels * inner.order)
        step = max(1, CHUNK // per)
        inner_tail = 0.0
        for a in range(0, len(cells), step):
            p2, w2, t2 = one_step_cloud(model, centers[a:a + step], inner, s_max)
            probs[a:a + step] = (w2 * _in_boxes(p2, boxes)).sum(axis=1)
            inner_tail = max(inner_tail, float(np.max(t2)))
        return float(np.dot(h[cells], probs)), float(h[-1]), inner_tail

    p, out, inner_tail = compose(grid)
    p_fine, out_fine, _ = compose(grid.refine(2))
    trunc = float(tail[0]) + inner_tail + max(out, 1.0 - float(W[0].sum()))
    return OracleResult(p_fine, trunc, abs(p_fine - p), 2, quad)


def write_oracle_csv(path, grid: GridSpec, masses, error_bound):
    """Cell bounds, probability and a shared error bound, one row per cell."""
    lo, hi = grid.cell_bounds()
    d = grid.dimension
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"lo_{i}" for i in range(d)] + [f"hi_{i}" for i in range(d)]
                   + ["probability", "error_bound"])
        for c in range(grid.n_cells):
            w.writerow([repr(float(v)) for v in lo[c]] + [repr(float(v)) for v in hi[c]]
                       + [repr(float(masses[c])), repr(float(error_bound))])
        w.writerow(["out"] * d + ["out"] * d + [repr(float(masses[-1])), repr(float(error_bound))])


def expected_holding_time(model: PdmpModel, X, eps=1e-10, panels=512, order=4):
    """``E_x(t_1) = int_0^inf exp(-Lambda_x(t)) dt`` for each row of ``X``.

    The integral is cut where the survival drops below ``eps``; the
    neglected part is at most ``eps / inf phi``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if model.intensity.constant_along_flow:
        r = _rates(model, X[:, None, :])[:, 0]
        return 1.0 / r
    s_max = max(s_horizon(model, x, eps) for x in X)
    s, w = ode.gauss_legendre(0.0, s_max, panels, order)
    out = np.empty(len(X))
    step = max(1, CHUNK // (len(s) * 8))
    for a in range(0, len(X), step):
        _, Lam = _flow_hazard(model, X[a:a + step], s)
        out[a:a + step] = np.exp(-Lam) @ w
    return out
