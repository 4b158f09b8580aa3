"""Exact simulation of the minimal process and its embedded chain.

Jump times are drawn by hazard inversion (solve ``Lambda_x(tau) = E`` with
``E`` standard exponential) or, for models with a cheap intensity bound,
by thinning a dominating Poisson stream.  Batches of paths advance in
lockstep; each block of ``BLOCK`` paths owns an RNG stream spawned from the
caller's seed, so results do not depend on the worker count.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import ode
from ._fast import backend
from .core import (DomainExitError, ExplosionError, HorizonExhaustedError, PdmpModel,
                   ThinningBoundError, flow_at, flow_many, jump_from, jump_many)

T_CAP = 1e9
BLOCK = 4096
METHODS = ("inversion", "thinning")


@dataclass(frozen=True)
class SimulationConfig:
    horizon: float = 100.0
    max_jumps: int = 10**6
    method: str = "inversion"
    seed: int | None = None
    workers: int = 1
    t_cap: float = T_CAP

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.max_jumps < 1:
            raise ValueError("max_jumps must be at least 1")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")


@dataclass
class Trajectory:
    """A path on ``[0, horizon]``: start, jump times, pre/post-jump states.

    ``exploded`` is set when ``max_jumps`` jumps happened before the
    horizon, the numerical stand-in for a finite explosion time.
    """

    x0: np.ndarray
    deltas: np.ndarray
    pre: np.ndarray
    post: np.ndarray
    thetas: np.ndarray
    horizon: float
    exploded: bool = False
    cap_hit: bool = False
    times: np.ndarray = field(init=False)

    def __post_init__(self):
        self.times = np.cumsum(self.deltas)

    @property
    def n_jumps(self):
        return len(self.deltas)

    @property
    def end_time(self):
        return float(self.times[-1]) if len(self.times) else 0.0

    def position(self, model, t):
        """``X(t)``, right-continuous at jump times."""
        if t < 0 or t > self.horizon:
            raise ValueError("time outside the simulated window")
        if self.exploded and t >= self.end_time:
            raise ExplosionError("trajectory exploded before the requested time")
        k = int(np.searchsorted(self.times, t, side="right"))
        start = self.x0 if k == 0 else self.post[k - 1]
        t0 = 0.0 if k == 0 else self.times[k - 1]
        return flow_at(model, start, t - t0)


# --------------------------------------------------------------------------
# jump times

def _gene_params(model):
    from .models import GeneExpressionParams
    return GeneExpressionParams(**model.params).as_array()


def _invert_generic(model, x, target, t_cap):
    rate0 = float(model.intensity.rate(x))
    flow = model.flow
    if flow.closed_form is not None:
        rhs = lambda t, y: np.array([float(model.intensity.rate(flow.closed_form(x, t)))])
        y0 = np.zeros(1)
        h0 = ode.initial_step(rate0, target)
    else:
        d = model.dimension

        def rhs(t, y):
            out = np.empty(d + 1)
            out[:d] = flow.field(y[:d])
            out[d] = model.intensity.rate(y[:d])
            return out

        y0 = np.concatenate([x, [0.0]])
        g0 = np.asarray(flow.field(x), dtype=float)
        h0 = ode.initial_step(rate0, target, float(np.max(np.abs(g0))),
                              float(np.max(np.abs(x))))
    try:
        tau, y = ode.integrate_until(rhs, y0, -1, target, flow.rtol, flow.atol, h0, t_cap)
    except ode.IntegrationError as exc:
        raise HorizonExhaustedError(str(exc)) from None
    if flow.closed_form is not None:
        pre = np.asarray(flow.closed_form(x, tau), dtype=float)
    else:
        pre = y[:-1]
    tol = 10 * max(flow.tolerance, 1e-12) * (1 + float(np.max(np.abs(pre))))
    return tau, model.space.admit(pre, tol)


def _hazard_stages(rate_at, t, lam, h, k1):
    """DP5 step of ``Lambda' = phi(pi_t x)`` for many rows at once.

    The right-hand side does not depend on ``Lambda``, so stages only need
    the times ``t + c_i h``.  Returns ``(lam_new, err, k7)``.
    """
    ks = [k1]
    for i in range(1, 7):
        ks.append(rate_at(t + ode.C[i] * h))
    lam_new = lam.copy()
    for j, a in enumerate(ode.A[6]):
        if a != 0.0:
            lam_new += (h * a) * ks[j]
    err = np.zeros_like(lam)
    for j, e in enumerate(ode.E):
        if e != 0.0:
            err += (h * e) * ks[j]
    return lam_new, err, ks[6]


def _invert_closed_many(model, X, target, t_cap):
    """Hazard inversion for closed-form flows, all rows in lockstep.

    Same controller and Illinois crossing search as :func:`ode.integrate_until`,
    with a step size per row.
    """
    flow, rate = model.flow, model.intensity.rate
    rtol, atol = flow.rtol, flow.atol

    def rate_of(idx):
        return lambda s: np.asarray(rate(flow.closed_form(X[idx], s)), dtype=float)

    n = len(X)
    t, lam = np.zeros(n), np.zeros(n)
    k1 = rate_of(np.arange(n))(t)
    h = np.where(k1 > 0, 0.5 * np.maximum(target, 1e-3) / np.where(k1 > 0, k1, 1.0), 1.0)
    tau = np.full(n, np.nan)
    live = np.arange(n)
    for _ in range(ode.MAX_STEPS):
        if not len(live):
            return tau
        lam_new, err_vec, k7 = _hazard_stages(rate_of(live), t[live], lam[live], h[live],
                                              k1[live])
        err = np.abs(err_vec) / (atol + rtol * np.maximum(np.abs(lam[live]), np.abs(lam_new)))
        safe = np.where(err == 0.0, 1.0, err)
        factor = np.where(err == 0.0, ode.MAX_FACTOR,
                          np.clip(ode.SAFETY * safe ** -0.2, ode.MIN_FACTOR, ode.MAX_FACTOR))
        ok = err <= 1.0
        cross = ok & (lam_new >= target[live])
        c = live[cross]
        if len(c):
            tau[c] = _locate_many(rate_of, c, t[c], lam[c], k1[c], h[c], lam_new[cross],
                                  target[c])
        move = ok & ~cross
        m = live[move]
        t[m] += h[m]
        lam[m] = lam_new[move]
        k1[m] = k7[move]
        h[m] *= factor[move]
        h[live[~ok]] *= np.minimum(1.0, factor[~ok])
        if np.any(t[m] > t_cap):
            raise HorizonExhaustedError("hazard target not reached before the time cap")
        live = live[~cross]
    raise HorizonExhaustedError("step limit reached while locating crossing")


def _locate_many(rate_of, rows, t, lam, k1, h, lam_h, target):
    """Vectorised Illinois iteration on the size of the crossing step."""
    lo, hi = np.zeros_like(h), h.copy()
    f_lo, f_hi = lam - target, lam_h - target
    side = np.zeros(len(h), dtype=np.int8)
    for _ in range(200):
        act = (f_hi != 0.0) & (hi - lo > ode.ROOT_RTOL * (t + hi))
        if not np.any(act):
            break
        a = np.flatnonzero(act)
        mid = hi[a] - f_hi[a] * (hi[a] - lo[a]) / (f_hi[a] - f_lo[a])
        mid = np.where((lo[a] < mid) & (mid < hi[a]), mid, 0.5 * (lo[a] + hi[a]))
        f_mid = _hazard_stages(rate_of(rows[a]), t[a], lam[a], mid, k1[a])[0] - target[a]
        up = f_mid >= 0.0
        u, d = a[up], a[~up]
        hi[u], f_hi[u] = mid[up], f_mid[up]
        f_lo[u[side[u] == 1]] *= 0.5
        lo[d], f_lo[d] = mid[~up], f_mid[~up]
        f_hi[d[side[d] == -1]] *= 0.5
        side[u], side[d] = 1, -1
    return t + hi


def _thinning_one(model, x, rng, t_cap):
    bound = float(model.intensity.bound_along_flow(x))
    if not bound > 0:
        raise ThinningBoundError("thinning needs a positive intensity bound")
    t = 0.0
    while True:
        t += rng.standard_exponential() / bound
        if t > t_cap:
            raise HorizonExhaustedError("no accepted event before the time cap")
        y = flow_at(model, x, t)
        r = float(model.intensity.rate(y))
        if r > bound * (1 + 1e-12):
            raise ThinningBoundError(f"intensity {r:g} exceeds bound {bound:g}")
        if rng.random() * bound < r:
            return t, y


def sample_jump_time(model: PdmpModel, x, rng, method="inversion", t_cap=T_CAP):
    """Draw the holding time from ``x`` and the pre-jump state ``pi_tau x``.

    The law is ``F_x(t) = 1 - exp(-Lambda_x(t))``.
    """
    x = np.asarray(x, dtype=float)
    if not model.space.contains(x):
        raise DomainExitError(f"{x} is not in the state space")
    if method == "thinning":
        return _thinning_one(model, x, rng, t_cap)
    if method != "inversion":
        raise ValueError(f"unknown method {method!r}")
    target = rng.standard_exponential()
    if model.intensity.constant_along_flow:
        r = float(model.intensity.rate(x))
        if r <= 0:
            raise HorizonExhaustedError("zero intensity: no jump ever occurs")
        tau = target / r
        return tau, flow_at(model, x, tau)
    if model.kernel == "gene":
        tau = float(backend.hazard_invert(x.reshape(1, -1), np.array([target]),
                                          _gene_params(model), model.flow.rtol,
                                          model.flow.atol, t_cap)[0])
        if not math.isfinite(tau):
            raise HorizonExhaustedError("hazard target not reached before the time cap")
        return tau, flow_at(model, x, tau)
    return _invert_generic(model, x, target, t_cap)


def sample_jump_times(model: PdmpModel, X, rng, method="inversion", t_cap=T_CAP):
    """Batch version of :func:`sample_jump_time`; returns ``(tau, pre)``."""
    X = np.asarray(X, dtype=float)
    n = len(X)
    if n == 0:
        return np.zeros(0), X.copy()
    if not model.vectorized:
        out = [sample_jump_time(model, x, rng, method, t_cap) for x in X]
        return np.array([o[0] for o in out]), np.array([o[1] for o in out])
    if method == "thinning":
        return _thinning_many(model, X, rng, t_cap)
    target = rng.standard_exponential(n)
    if model.intensity.constant_along_flow:
        r = np.asarray(model.intensity.rate(X), dtype=float)
        if np.any(r <= 0):
            raise HorizonExhaustedError("zero intensity: no jump ever occurs")
        tau = target / r
    elif model.kernel == "gene":
        tau = backend.hazard_invert(X, target, _gene_params(model), model.flow.rtol,
                                    model.flow.atol, t_cap)
        if not np.all(np.isfinite(tau)):
            raise HorizonExhaustedError("hazard target not reached before the time cap")
    elif model.flow.closed_form is not None:
        tau = _invert_closed_many(model, X, target, t_cap)
    else:
        out = [_invert_generic(model, x, e, t_cap) for x, e in zip(X, target)]
        return np.array([o[0] for o in out]), np.array([o[1] for o in out])
    return tau, flow_many(model, X, tau)


def _thinning_many(model, X, rng, t_cap):
    n = len(X)
    bound = np.broadcast_to(np.asarray(model.intensity.bound_along_flow(X), dtype=float), (n,))
    if np.any(bound <= 0):
        raise ThinningBoundError("thinning needs a positive intensity bound")
    t = np.zeros(n)
    tau = np.full(n, np.nan)
    pre = np.empty_like(X)
    live = np.arange(n)
    while len(live):
        t[live] += rng.standard_exponential(len(live)) / bound[live]
        if np.any(t[live] > t_cap):
            raise HorizonExhaustedError("no accepted event before the time cap")
        Y = flow_many(model, X[live], t[live])
        r = np.asarray(model.intensity.rate(Y), dtype=float)
        if np.any(r > bound[live] * (1 + 1e-12)):
            raise ThinningBoundError("intensity exceeds the declared bound")
        acc = rng.random(len(live)) * bound[live] < r
        done = live[acc]
        tau[done] = t[done]
        pre[done] = Y[acc]
        live = live[~acc]
    return tau, pre


# --------------------------------------------------------------------------
# embedded chain and paths

def step_embedded_chain(model: PdmpModel, x, rng, method="inversion"):
    """One step of the chain of post-jump positions: ``(X_1, t_1)``."""
    tau, pre = sample_jump_time(model, x, rng, method)
    post, _ = jump_from(model, pre, rng)
    return post, tau


def step_many(model: PdmpModel, X, rng, method="inversion"):
    """One chain step for each row of ``X``: ``(post, tau, pre, theta)``."""
    tau, pre = sample_jump_times(model, X, rng, method)
    post, theta = jump_many(model, pre, rng)
    return post, tau, pre, theta


def run_chain(model: PdmpModel, x0, n_steps, rng, method="inversion"):
    """``n_steps`` steps of one embedded chain.

    Returns ``(post, tau)`` with ``post[k] = X_{k+1}``.  The gene model uses
    the compiled chain kernel.
    """
    x0 = np.asarray(x0, dtype=float)
    if model.kernel == "gene" and method == "inversion":
        targets = rng.standard_exponential(n_steps)
        thetas = model.jumps.sample_many(np.empty((n_steps, 2)), rng)[:, 0]
        _, post, tau = backend.chain(x0, targets, thetas, _gene_params(model),
                                     model.flow.rtol, model.flow.atol, T_CAP)
        if not np.all(np.isfinite(tau)):
            raise HorizonExhaustedError("hazard target not reached before the time cap")
        return post, tau
    post = np.empty((n_steps, model.dimension))
    tau = np.empty(n_steps)
    x = x0
    for k in range(n_steps):
        x, tau[k] = step_embedded_chain(model, x, rng, method)
        post[k] = x
    return post, tau


def simulate_path(model: PdmpModel, x0, config: SimulationConfig, rng) -> Trajectory:
    """Simulate until the horizon or ``max_jumps`` jumps, whichever first."""
    x = np.asarray(x0, dtype=float)
    if not model.space.contains(x):
        raise DomainExitError(f"{x} is not in the state space")
    deltas, pres, posts, thetas = [], [], [], []
    elapsed = 0.0
    while len(deltas) < config.max_jumps:
        tau, pre = sample_jump_time(model, x, rng, config.method, config.t_cap)
        if elapsed + tau > config.horizon:
            break
        post, theta = jump_from(model, pre, rng)
        deltas.append(tau)
        pres.append(pre)
        posts.append(post)
        thetas.append(theta)
        elapsed += tau
        x = post
    d = model.dimension
    k = model.jumps.theta_dim
    traj = Trajectory(np.asarray(x0, dtype=float), np.array(deltas, dtype=float),
                      np.array(pres, dtype=float).reshape(-1, d),
                      np.array(posts, dtype=float).reshape(-1, d),
                      np.array(thetas, dtype=float).reshape(-1, k), config.horizon)
    if len(deltas) >= config.max_jumps:
        traj.cap_hit = True
        traj.exploded = traj.end_time < config.horizon
    return traj


def sample_position_at(model: PdmpModel, x0, t, config: SimulationConfig, rng):
    """``X(t)`` from a fresh trajectory started at ``x0``."""
    if t > config.horizon:
        raise ValueError("t exceeds the configured horizon")
    if t == 0:
        return np.asarray(x0, dtype=float).copy()
    sub = SimulationConfig(horizon=t, max_jumps=config.max_jumps, method=config.method,
                           t_cap=config.t_cap)
    traj = simulate_path(model, x0, sub, rng)
    if traj.exploded:
        raise ExplosionError("explosion suspected before the requested time")
    return traj.position(model, t)


# --------------------------------------------------------------------------
# many paths

def streams(seed, n):
    """``n`` independent generators derived from ``seed``.

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    """
    if isinstance(seed, np.random.Generator):
        return seed.spawn(n)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(n)]


@dataclass
class BatchResult:
    """Outcome of :func:`simulate_many`.

    ``positions[j, p]`` is ``X(times[j])`` on path ``p`` (``nan`` where the
    path exploded first).  ``jumps`` counts jumps inside the horizon and
    ``end_times`` holds the last jump time within it.
    """

    times: np.ndarray
    positions: np.ndarray
    jumps: np.ndarray
    end_times: np.ndarray
    exploded: np.ndarray
    final: np.ndarray


def _batch_block(model, X0, times, horizon, max_jumps, method, rng):
    n, d = X0.shape
    X = X0.copy()
    T = np.zeros(n)
    jumps = np.zeros(n, dtype=np.int64)
    exploded = np.zeros(n, dtype=bool)
    pos = np.full((len(times), n, d), np.nan)
    live = np.arange(n)
    while len(live):
        tau, pre = sample_jump_times(model, X[live], rng, method)
        new_T = T[live] + tau
        for j, tj in enumerate(times):
            hit = (T[live] <= tj) & (tj < new_T)
            if np.any(hit):
                p = live[hit]
                pos[j, p] = flow_many(model, X[p], tj - T[p])
        inside = new_T <= horizon
        stay = live[inside]
        if len(stay):
            post, _ = jump_many(model, pre[inside], rng)
            X[stay] = post
            T[stay] = new_T[inside]
            jumps[stay] += 1
        capped = stay[jumps[stay] >= max_jumps]
        exploded[capped] = T[capped] < horizon
        live = stay[jumps[stay] < max_jumps]
    return pos, jumps, T, exploded, X


def simulate_many(model: PdmpModel, x0, n_paths, config: SimulationConfig, times=(),
                  seed=None):
    """Simulate ``n_paths`` independent paths and record ``X(t)`` at ``times``.

    ``x0`` is one state or an ``(n_paths, d)`` array.  Paths are processed
    in blocks of ``BLOCK`` with one RNG stream per block; blocks are
    distributed over ``config.workers`` threads and merged in block order.
    """
    d = model.dimension
    X0 = np.broadcast_to(np.asarray(x0, dtype=float), (n_paths, d)).copy()
    times = np.asarray(times, dtype=float)
    if np.any(times > config.horizon) or np.any(times < 0):
        raise ValueError("requested times must lie in [0, horizon]")
    n_blocks = max(1, math.ceil(n_paths / BLOCK))
    rngs = streams(config.seed if seed is None else seed, n_blocks)
    cuts = [(b * BLOCK, min(n_paths, (b + 1) * BLOCK)) for b in range(n_blocks)]

    def run(b):
        lo, hi = cuts[b]
        if model.vectorized:
            return _batch_block(model, X0[lo:hi], times, config.horizon, config.max_jumps,
                                config.method, rngs[b])
        parts = [_path_block(model, x, times, config, rngs[b]) for x in X0[lo:hi]]
        return (np.stack([p[0] for p in parts], axis=1), np.array([p[1] for p in parts]),
                np.array([p[2] for p in parts]), np.array([p[3] for p in parts]),
                np.array([p[4] for p in parts]))

    if config.workers > 1 and n_blocks > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            results = list(pool.map(run, range(n_blocks)))
    else:
        results = [run(b) for b in range(n_blocks)]
    return BatchResult(
        times=times,
        positions=np.concatenate([r[0] for r in results], axis=1),
        jumps=np.concatenate([r[1] for r in results]),
        end_times=np.concatenate([r[2] for r in results]),
        exploded=np.concatenate([r[3] for r in results]),
        final=np.concatenate([r[4] for r in results]),
    )


def _path_block(model, x, times, config, rng):
    traj = simulate_path(model, x, config, rng)
    pos = np.full((len(times), model.dimension), np.nan)
    for j, tj in enumerate(times):
        if not (traj.exploded and tj >= traj.end_time):
            pos[j] = traj.position(model, tj)
    final = traj.post[-1] if traj.n_jumps else traj.x0
    return pos, traj.n_jumps, traj.end_time, traj.exploded, final


def write_trajectories_csv(path, trajectories, model: PdmpModel):
    """One row per jump: ``path_id, k, t_k, pre_*, post_*, theta_*``."""
    d, k = model.dimension, model.jumps.theta_dim
    header = (["path_id", "k", "t_k"] + [f"pre_{i}" for i in range(d)]
              + [f"post_{i}" for i in range(d)] + [f"theta_{i}" for i in range(k)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for pid, traj in enumerate(trajectories):
            for j in range(traj.n_jumps):
                w.writerow([pid, j + 1, repr(float(traj.times[j]))]
                           + [repr(float(v)) for v in traj.pre[j]]
                           + [repr(float(v)) for v in traj.post[j]]
                           + [repr(float(v)) for v in traj.thetas[j]])
