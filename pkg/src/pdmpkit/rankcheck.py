"""Rank conditions for composed jump-flow maps.

A stage maps ``y`` to ``T_theta(pi_s y)``.  Its state derivative is
``Xi = T'_theta(pi_s y) D pi_s(y)`` and its parameter derivative is
``Psi = [dT/dtheta(pi_s y) | T'_theta(pi_s y) g(pi_s y)]``.  For ``n``
stages the derivative in ``(theta_1, s_1, ..., theta_n, s_n)`` is

    [Xi_{n-1} ... Xi_1 Psi_0 | ... | Xi_{n-1} Psi_{n-2} | Psi_{n-1}].

If this matrix has rank ``d`` and the composed weight is positive the
chain kernel dominates an absolutely continuous part near the image point.
Finite differences are available for every matrix as a cross-check.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import NotDifferentiableError, PdmpModel, flow_at
from .kernels import ComposedJumpMap

TAU_RANK = 1e-8
MODES = ("s-only", "theta-and-s")


def fd_step(x):
    return max(1e-6, 1e-7 * float(np.linalg.norm(x)))


def _central(f, p, skip=()):
    """Central-difference Jacobian of ``f`` at ``p`` (one-sided at 0 for
    coordinates that must stay nonnegative is left to the caller)."""
    p = np.asarray(p, dtype=float)
    f0 = np.asarray(f(p), dtype=float)
    J = np.zeros((f0.size, p.size))
    h = fd_step(p)
    for j in range(p.size):
        if j in skip:
            continue
        e = np.zeros_like(p)
        e[j] = h
        J[:, j] = (np.asarray(f(p + e)) - np.asarray(f(p - e))) / (2 * h)
    if not np.all(np.isfinite(J)):
        raise NotDifferentiableError("finite differences produced non-finite values")
    return J


def _jac_x(model, theta, z):
    j = model.jumps
    if j.jac_x is not None:
        return np.asarray(j.jac_x(theta, z), dtype=float)
    return _central(lambda y: j.transform(theta, y), z, skip=model.space.discrete)


def _jac_theta(model, theta, z):
    j = model.jumps
    if j.kind == "discrete":
        return np.zeros((model.dimension, 0))
    if j.jac_theta is not None:
        return np.asarray(j.jac_theta(theta, z), dtype=float).reshape(model.dimension, -1)
    return _central(lambda th: j.transform(th, z), theta)


def _jac_flow(model, y, s):
    if model.flow.jacobian is not None:
        return np.asarray(model.flow.jacobian(y, s), dtype=float)
    return _central(lambda v: flow_at(model, np.maximum(v, _lower(model)), s), y,
                    skip=model.space.discrete)


def _lower(model):
    lo = model.space.lower
    return -np.inf if lo is None else np.asarray(lo, dtype=float)


def _field(model, z):
    return np.asarray(model.flow.field(z), dtype=float)


@dataclass
class JacobianFactors:
    """Per-stage factors and intermediate states for one sequence.

    ``ys[k]`` is the input of stage ``k`` and ``zs[k] = pi_{s_k} ys[k]`` its
    pre-jump point.
    """

    xi: list
    psi: list
    ys: list
    zs: list


def factors(model: PdmpModel, x, cmap: ComposedJumpMap) -> JacobianFactors:
    ys, zs, xi, psi = [np.asarray(x, dtype=float)], [], [], []
    for th, s in zip(cmap.thetas, cmap.times):
        y = ys[-1]
        z = flow_at(model, y, s)
        Tp = _jac_x(model, th, z)
        xi.append(Tp @ _jac_flow(model, y, s))
        psi.append(np.column_stack([_jac_theta(model, th, z), Tp @ _field(model, z)]))
        zs.append(z)
        ys.append(np.asarray(model.jumps.transform(th, z), dtype=float))
    return JacobianFactors(xi, psi, ys, zs)


def _assemble(f: JacobianFactors, d, mode):
    n = len(f.psi)
    blocks = []
    for k in range(n):
        B = f.psi[k] if mode == "theta-and-s" else f.psi[k][:, -1:]
        for j in range(k + 1, n):
            B = f.xi[j] @ B
        blocks.append(B)
    return np.hstack(blocks) if blocks else np.zeros((d, 0))


def jacobian_chain(model: PdmpModel, x, cmap: ComposedJumpMap, mode="theta-and-s"):
    """Derivative of ``T_(theta^n,s^n)(x)`` in ``s^n`` or in ``(theta^n, s^n)``.

    Columns are ordered per stage: ``theta_k`` components, then ``s_k``.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    return _assemble(factors(model, x, cmap), model.dimension, mode)


def jacobian_continuous(model: PdmpModel, x, cmap: ComposedJumpMap, t, mode="theta-and-s"):
    """Derivative of ``pi_{t - s(n)} T_(theta^n,s^n)(x)``, ``s(n) = sum s_i``.

    Equals ``Upsilon_x (chain matrix) + Upsilon`` where ``Upsilon_x`` is the
    flow derivative over the remaining time and ``Upsilon`` carries
    ``-g(pi_{t-s(n)} y_n)`` in every ``s`` column.
    """
    total = float(sum(cmap.times))
    if not total < t:
        raise ValueError("sum of the s_i must be below the horizon t")
    f = factors(model, x, cmap)
    d = model.dimension
    chain = _assemble(f, d, mode)
    rest = t - total
    end = flow_at(model, f.ys[-1], rest)
    M = _jac_flow(model, f.ys[-1], rest) @ chain
    g_end = _field(model, end)
    col = 0
    for k in range(len(cmap)):
        width = f.psi[k].shape[1] if mode == "theta-and-s" else 1
        M[:, col + width - 1] -= g_end
        col += width
    return M


def limit_matrix_chain(model: PdmpModel, x, thetas):
    """Limit of the ``s``-derivative as all ``s_i -> 0``.

    Columns ``T'_{theta_n}(y_{n-1}) ... T'_{theta_{i+1}}(y_i) g(y_i)`` with
    ``y_0 = x`` and ``y_i = T_{theta_i}(y_{i-1})``.
    """
    ys = [np.asarray(x, dtype=float)]
    Ts = []
    for th in thetas:
        th = np.atleast_1d(np.asarray(th, dtype=float))
        Ts.append(_jac_x(model, th, ys[-1]))
        ys.append(np.asarray(model.jumps.transform(th, ys[-1]), dtype=float))
    cols = []
    n = len(Ts)
    for i in range(n):
        v = _field(model, ys[i])
        for j in range(i, n):
            v = Ts[j] @ v
        cols.append(v)
    return np.column_stack(cols) if cols else np.zeros((model.dimension, 0)), ys


def limit_matrix_continuous(model: PdmpModel, x, thetas):
    """Small-time limit of the continuous-time ``s``-derivative: the chain
    limit columns minus ``g(y_n)``."""
    M, ys = limit_matrix_chain(model, x, thetas)
    return M - _field(model, ys[-1])[:, None]


# --------------------------------------------------------------------------
# finite differences of the composed maps

def _params(cmap, mode, discrete):
    vec, layout = [], []
    for th, s in zip(cmap.thetas, cmap.times):
        if mode == "theta-and-s" and not discrete:
            vec.extend(th)
            layout.append(len(th))
        else:
            layout.append(0)
        vec.append(s)
    return np.array(vec, dtype=float), layout


def _rebuild(cmap, vec, layout):
    thetas, times, i = [], [], 0
    for th, w in zip(cmap.thetas, layout):
        thetas.append(vec[i:i + w] if w else th)
        i += w
        times.append(vec[i])
        i += 1
    return ComposedJumpMap(cmap.model, tuple(thetas), tuple(times))


def fd_jacobian_chain(model: PdmpModel, x, cmap: ComposedJumpMap, mode="theta-and-s"):
    """End-to-end central differences of ``T_(theta^n,s^n)(x)``."""
    vec, layout = _params(cmap, mode, model.jumps.kind == "discrete")
    return _fd_nonneg(lambda v: _rebuild(cmap, v, layout).evaluate(x), vec, layout)


def fd_jacobian_continuous(model: PdmpModel, x, cmap: ComposedJumpMap, t, mode="theta-and-s"):
    vec, layout = _params(cmap, mode, model.jumps.kind == "discrete")

    def f(v):
        c = _rebuild(cmap, v, layout)
        return flow_at(model, c.evaluate(x), t - sum(c.times))

    return _fd_nonneg(f, vec, layout)


def _fd_nonneg(f, vec, layout):
    # times must stay nonnegative: use a one-sided stencil when s < h
    h = fd_step(vec)
    f0 = np.asarray(f(vec), dtype=float)
    J = np.zeros((f0.size, vec.size))
    for j in range(vec.size):
        e = np.zeros_like(vec)
        e[j] = h
        if vec[j] - h < 0:
            J[:, j] = (-3 * f0 + 4 * np.asarray(f(vec + e)) - np.asarray(f(vec + 2 * e))) / (2 * h)
        else:
            J[:, j] = (np.asarray(f(vec + e)) - np.asarray(f(vec - e))) / (2 * h)
    if not np.all(np.isfinite(J)):
        raise NotDifferentiableError("finite differences produced non-finite values")
    return J


# --------------------------------------------------------------------------
# reports

def numeric_rank(M, tau=TAU_RANK):
    """``(rank, singular values)``; rank counts ``sigma_i > tau * sigma_max``."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0, np.zeros(0)
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[0] == 0.0:
        return 0, sv
    return int(np.sum(sv > tau * sv[0])), sv


@dataclass
class RankReport:
    point: list
    thetas: list
    times: list
    kind: str
    singular_values: list
    rank: int
    dimension: int
    weight: float
    tau_rank: float = TAU_RANK
    horizon: float | None = None
    status: str = field(default="")

    def __post_init__(self):
        if not self.status:
            self.status = "certified" if self.verdict else "failed"

    @property
    def verdict(self):
        return self.rank == self.dimension and self.weight > 0

    def to_dict(self):
        return {"point": self.point, "thetas": self.thetas, "times": self.times,
                "matrix": self.kind, "singular_values": self.singular_values,
                "rank": self.rank, "dimension": self.dimension, "weight": self.weight,
                "tau_rank": self.tau_rank, "horizon": self.horizon,
                "verdict": self.verdict, "status": self.status}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def rank_report(model: PdmpModel, x, cmap: ComposedJumpMap, mode="theta-and-s",
                tau=TAU_RANK, t=None) -> RankReport:
    """Rank of the chain (or, with ``t``, continuous-time) matrix restricted
    to the continuous coordinates, plus positivity of the composed weight."""
    axes = list(model.space.continuous_axes)
    if len(cmap) == 0:
        M = np.zeros((len(axes), 0))
    elif t is None:
        M = jacobian_chain(model, x, cmap, mode)[axes]
    else:
        M = jacobian_continuous(model, x, cmap, t, mode)[axes]
    r, sv = numeric_rank(M, tau)
    w = cmap.weight(x) if len(cmap) else 0.0
    kind = ("continuous" if t is not None else "chain") + ":" + mode
    return RankReport(np.asarray(x, float).tolist(),
                      [np.asarray(th).tolist() for th in cmap.thetas], list(cmap.times),
                      kind, sv.tolist(), r, len(axes), float(w), tau, t)


def _draw_sequence(model, x, n, rng):
    """Parameters drawn from the process itself, so the weight is positive."""
    from .simulate import sample_jump_time

    cmap = ComposedJumpMap(model)
    y = np.asarray(x, dtype=float)
    for _ in range(n):
        tau, pre = sample_jump_time(model, y, rng)
        th = np.atleast_1d(np.asarray(model.jumps.sample(pre, rng), dtype=float))
        cmap = cmap.extend(th, tau)
        y = np.asarray(model.jumps.transform(th, pre), dtype=float)
    return cmap


def search_rank_certificate(model: PdmpModel, x, max_n=2, budget=64, rng=None,
                            mode="theta-and-s", tau=TAU_RANK, t=None) -> RankReport:
    """Sample sequences with ``n = 1..max_n`` until one certifies rank ``d``.

    Returns the first certified report in search order; otherwise the
    failure with the largest ``sigma_min / sigma_max``, marked
    ``inconclusive``.
    """
    if not 1 <= max_n <= 4:
        raise ValueError("max_n must be between 1 and 4")
    rng = rng if rng is not None else np.random.default_rng(0)
    best, best_score = None, -1.0
    for n in range(1, max_n + 1):
        for _ in range(budget):
            cmap = _draw_sequence(model, x, n, rng)
            if t is not None and sum(cmap.times) >= t:
                continue
            rep = rank_report(model, x, cmap, mode, tau, t)
            if rep.verdict:
                return rep
            sv = rep.singular_values
            score = (sv[-1] / sv[0]) if sv and sv[0] > 0 and len(sv) >= rep.dimension else 0.0
            score += rep.rank
            if score > best_score:
                best, best_score = rep, score
    if best is None:
        best = rank_report(model, x, ComposedJumpMap(model), mode, tau)
    best.status = "inconclusive"
    return best
