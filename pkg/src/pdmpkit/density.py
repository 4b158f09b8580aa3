"""Histogram estimates of invariant densities and related diagnostics.

Two targets are estimated: the invariant law of the embedded chain
(histogram of post-jump states after burn-in) and the invariant law of the
continuous-time process (time-weighted occupation of the path).  The second
can also be built from chain states by weighting each with its survival
curve, which is how the two are linked.  Total variation on a fixed grid,
with an explicit out-of-box cell, is the comparison used everywhere.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import ExplosionError, PdmpModel, flow_along
from .grid import GridSpec, total_variation
from .kernels import CHUNK, _flow_hazard, s_horizon
from .simulate import (SimulationConfig, run_chain, sample_jump_times, simulate_many,
                       simulate_path, step_many, streams)

RESERVOIR = 10_000


@dataclass
class DensityEstimate:
    """Cell masses on ``grid`` (last entry: outside the box).

    ``outside`` keeps up to ``RESERVOIR`` of the samples that fell outside
    the box so resampling can reproduce them.
    """

    grid: GridSpec
    masses: np.ndarray
    n_samples: int
    burn_in: float = 0
    seed: object = None
    kind: str = "chain"
    outside: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def probabilities(self):
        return self.masses / self.masses.sum()

    @property
    def in_box_mass(self):
        return float(self.probabilities[:-1].sum())

    @property
    def out_of_box_mass(self):
        return float(self.probabilities[-1])

    def density(self):
        """Density values (mass / cell volume) on the cells of the box."""
        return self.probabilities[:-1] / self.grid.volumes()

    def tv(self, other):
        return total_variation(self.masses, other.masses)

    def coarsened(self, coarse: GridSpec, factor=2):
        return DensityEstimate(coarse, coarse.coarsen(self.masses, factor), self.n_samples,
                               self.burn_in, self.seed, self.kind, self.outside, dict(self.meta))

    def marginal(self, axis):
        """Masses summed over all axes but ``axis`` (out-of-box cell kept last)."""
        body = self.probabilities[:-1].reshape(self.grid.shape)
        other = tuple(a for a in range(self.grid.dimension) if a != axis)
        return np.concatenate([body.sum(axis=other), self.probabilities[-1:]])

    def metadata(self):
        return {"kind": self.kind, "grid": self.grid.to_dict(), "n_samples": self.n_samples,
                "burn_in": self.burn_in, "seed": self.seed,
                "in_box_mass": self.in_box_mass, "out_of_box_mass": self.out_of_box_mass,
                **self.meta}

    def to_csv(self, path):
        shape = self.grid.shape
        p = self.probabilities
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"i{a}" for a in range(len(shape))] + ["mass"])
            for flat, idx in enumerate(itertools.product(*(range(n) for n in shape))):
                w.writerow(list(idx) + [repr(float(p[flat]))])
            w.writerow(["out"] * len(shape) + [repr(float(p[-1]))])

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.metadata(), fh, indent=2, sort_keys=True)


def _estimate(grid, X, weights=None, **kw):
    X = np.asarray(X, dtype=float)
    masses = grid.histogram(X, weights)
    out = X[grid.cell_index(X) == grid.n_cells][:RESERVOIR] if len(X) else None
    return DensityEstimate(grid, masses, outside=out, **kw)


def _check_explosion(model, post, tau):
    if not np.all(np.isfinite(tau)):
        raise ExplosionError("chain stopped: holding time undefined")


# --------------------------------------------------------------------------
# embedded chain

def chain_samples(model: PdmpModel, x0, N, burn_in, seed, paths=1):
    """Post-jump states ``X_{burn_in+1..N}`` pooled over ``paths`` chains."""
    out = []
    for rng in streams(seed, paths):
        post, tau = run_chain(model, x0, N, rng)
        _check_explosion(model, post, tau)
        out.append(post[burn_in:N])
    return np.concatenate(out)


def estimate_chain_density(model: PdmpModel, x0, N, grid: GridSpec, burn_in=None, seed=0,
                           paths=1) -> DensityEstimate:
    """Histogram of the embedded chain after ``burn_in`` steps (default 10%)."""
    burn_in = N // 10 if burn_in is None else int(burn_in)
    if not N > burn_in:
        raise ValueError("N must exceed burn_in")
    X = chain_samples(model, x0, N, burn_in, seed, paths)
    return _estimate(grid, X, n_samples=len(X), burn_in=burn_in, seed=seed, kind="chain",
                     meta={"N": N, "paths": paths})


# --------------------------------------------------------------------------
# continuous time

def path_samples(model: PdmpModel, traj, times):
    """``X(t)`` along a trajectory at sorted ``times`` (right-continuous)."""
    times = np.asarray(times, dtype=float)
    k = np.searchsorted(traj.times, times, side="right")
    starts = np.vstack([traj.x0[None, :], traj.post])
    t0 = np.concatenate([[0.0], traj.times])
    out = np.empty((len(times), model.dimension))
    if model.vectorized and model.flow.closed_form is not None:
        return model.space.admit_many(
            model.flow.closed_form(starts[k], times - t0[k]), 1e-12)
    bounds = np.flatnonzero(np.diff(k)) + 1
    for seg in np.split(np.arange(len(times)), bounds):
        if len(seg) == 0:
            continue
        j = k[seg[0]]
        out[seg] = flow_along(model, starts[j], times[seg] - t0[j])
    return out


def default_dt(model: PdmpModel, x0):
    """``0.01 / phi_bar`` using the declared or flow-wise intensity bound."""
    try:
        bound = float(np.max(model.intensity.bound_along_flow(np.asarray(x0, dtype=float))))
    except Exception:
        bound = model.intensity.upper or float(model.intensity.rate(np.asarray(x0, float)))
    if model.intensity.upper is not None:
        bound = max(bound, model.intensity.upper)
    return 0.01 / bound


def estimate_flow_density(model: PdmpModel, x0, horizon, grid: GridSpec, seed=0, paths=1,
                          dt=None, burn_in=0.0, max_jumps=10**7) -> DensityEstimate:
    """Time-weighted occupation histogram of ``t -> X(t)`` on ``[burn_in, horizon]``.

    The path is sampled every ``dt`` (default ``0.01 / phi_bar``) at the
    midpoints of the sampling intervals.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    dt = default_dt(model, x0) if dt is None else dt
    n = max(1, int(math.ceil((horizon - burn_in) / dt)))
    times = burn_in + (np.arange(n) + 0.5) * ((horizon - burn_in) / n)
    masses = np.zeros(grid.n_cells + 1)
    outside = []
    cfg = SimulationConfig(horizon=horizon, max_jumps=max_jumps)
    for rng in streams(seed, paths):
        traj = simulate_path(model, x0, cfg, rng)
        if traj.exploded:
            raise ExplosionError("explosion suspected before the horizon")
        for a in range(0, n, CHUNK):
            X = path_samples(model, traj, times[a:a + CHUNK])
            masses += grid.histogram(X)
            if sum(len(o) for o in outside) < RESERVOIR:
                outside.append(X[grid.cell_index(X) == grid.n_cells][:RESERVOIR])
    out = np.concatenate(outside)[:RESERVOIR] if outside else None
    return DensityEstimate(grid, masses, n * paths, burn_in, seed, "flow", out,
                           {"horizon": horizon, "dt": (horizon - burn_in) / n, "paths": paths})


def flow_density_from_chain(model: PdmpModel, states, grid: GridSpec, eps=1e-8,
                            panels=256, order=2, seed=None) -> DensityEstimate:
    """Flow density from chain states weighted by their survival curves.

    Each state ``x`` contributes ``int_0^inf exp(-Lambda_x(s)) 1_cell(pi_s x) ds``,
    so states are weighted by their expected holding time.
    """
    from . import ode

    states = np.atleast_2d(np.asarray(states, dtype=float))
    s_max = max(s_horizon(model, x, eps) for x in states[:64])
    s, w = ode.gauss_legendre(0.0, s_max, panels, order)
    masses = np.zeros(grid.n_cells + 1)
    step = max(1, CHUNK // (len(s) * 8))
    for a in range(0, len(states), step):
        Y, Lam = _flow_hazard(model, states[a:a + step], s)
        W = np.exp(-Lam) * w[None, :]
        masses += grid.histogram(Y.reshape(-1, Y.shape[-1]), W.ravel())
    return DensityEstimate(grid, masses, len(states), 0, seed, "flow-from-chain")


# --------------------------------------------------------------------------
# diagnostics

def resample(estimate: DensityEstimate, n, rng):
    """Draw ``n`` states from a histogram estimate.

    Cells are picked by mass and filled uniformly; the out-of-box cell is
    resampled from the stored outside samples.
    """
    p = estimate.probabilities
    cells = rng.choice(len(p), size=n, p=p)
    inside = cells < estimate.grid.n_cells
    X = np.empty((n, estimate.grid.dimension))
    X[inside] = estimate.grid.sample_in_cells(cells[inside], rng)
    n_out = int(np.sum(~inside))
    if n_out:
        pool = estimate.outside
        if pool is None or len(pool) == 0:
            raise ValueError("estimate has out-of-box mass but no stored outside samples")
        X[~inside] = pool[rng.integers(len(pool), size=n_out)]
    return X


def stationarity_residual(model: PdmpModel, estimate: DensityEstimate, seed=0, n=None):
    """TV between an estimate and its image under one chain step."""
    if estimate.n_samples < 10_000:
        raise ValueError("stationarity residual needs an estimate with >= 1e4 samples")
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    n = estimate.n_samples if n is None else n
    X = resample(estimate, n, rng)
    post = step_many(model, X, rng)[0]
    return total_variation(estimate.masses, estimate.grid.histogram(post))


@dataclass
class PositivityProbe:
    eligible: int
    empty: int
    n_samples: int

    @property
    def passed(self):
        return self.empty == 0


def positivity_probe(reference: DensityEstimate, test: DensityEstimate, min_expected=0.5):
    """Every cell expected (from ``reference``) to receive at least
    ``min_expected`` of ``test``'s samples must be non-empty in ``test``."""
    expected = reference.probabilities[:-1] * test.n_samples
    eligible = expected >= min_expected
    empty = eligible & (test.masses[:-1] == 0)
    return PositivityProbe(int(eligible.sum()), int(empty.sum()), test.n_samples)


@dataclass
class StabilityCurves:
    times: np.ndarray
    starts: list
    pairs: list
    distances: np.ndarray   # (n_pairs, n_times), L1 = 2 TV

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"L1_{i}_{j}" for i, j in self.pairs])
            for k, t in enumerate(self.times):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in self.distances[:, k]])

    def to_dict(self):
        return {"times": self.times.tolist(), "starts": self.starts,
                "pairs": [list(p) for p in self.pairs], "distances": self.distances.tolist()}


def stability_probe(model: PdmpModel, starts, times, grid: GridSpec, n_paths=10**5, seed=0,
                    max_jumps=10**6, workers=1) -> StabilityCurves:
    """Pairwise L1 distances between the laws of ``X(t)`` from each start."""
    if len(starts) < 2:
        raise ValueError("need at least two initial points")
    times = np.asarray(times, dtype=float)
    cfg = SimulationConfig(horizon=float(times.max()), max_jumps=max_jumps, workers=workers)
    hists = []
    for k, ss in enumerate(np.random.SeedSequence(seed).spawn(len(starts))):
        res = simulate_many(model, starts[k], n_paths, cfg, times, seed=ss)
        if np.any(res.exploded):
            raise ExplosionError(f"{int(res.exploded.sum())} paths flagged explosion")
        hists.append([grid.histogram(res.positions[j]) for j in range(len(times))])
    pairs = list(itertools.combinations(range(len(starts)), 2))
    dist = np.array([[2 * total_variation(hists[i][j], hists[k][j]) for j in range(len(times))]
                     for i, k in pairs])
    return StabilityCurves(times, [list(map(float, s)) for s in starts], pairs, dist)


@dataclass
class HoldingTimeReport:
    estimate: float
    standard_error: float
    estimate_half: float
    standard_error_half: float
    samples: int

    @property
    def shift(self):
        return abs(self.estimate - self.estimate_half)

    @property
    def stable(self):
        return bool(math.isfinite(self.estimate) and self.shift < 3 * self.standard_error)

    def to_dict(self):
        return {"estimate": self.estimate, "standard_error": self.standard_error,
                "estimate_half": self.estimate_half,
                "standard_error_half": self.standard_error_half,
                "shift": self.shift, "stable": self.stable, "samples": self.samples}


def check_r0v(model: PdmpModel, estimate: DensityEstimate, M=10**4, seed=0) -> HoldingTimeReport:
    """Average holding time from states drawn from a chain estimate.

    ``2M`` states are drawn; the estimate from the first ``M`` is compared
    with the one from all ``2M`` (nested doubling).
    """
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    X = resample(estimate, 2 * M, rng)
    tau, _ = sample_jump_times(model, X, rng)
    half, full = tau[:M], tau
    return HoldingTimeReport(float(full.mean()), float(full.std(ddof=1) / math.sqrt(2 * M)),
                             float(half.mean()), float(half.std(ddof=1) / math.sqrt(M)), 2 * M)
