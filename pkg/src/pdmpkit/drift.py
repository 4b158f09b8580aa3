"""Foster-Lyapunov drift of the embedded chain.

For a Lyapunov function ``V`` the drift is
``D(x) = int V(y) K(x, dy) - V(x) = E_x V(X(t_1)) - V(x)``.  If
``D(x) <= -c1 + c2 1_{B0}(x)`` with ``c1 > 0`` the chain spends at least a
fraction ``c1 / c2`` of its steps in ``B0`` in the long run.  Everything
here is a check on a finite set of points; the report says so.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import ode
from .core import PdmpError, PdmpModel
from .kernels import CHUNK, QuadratureSpec, _flow_hazard, one_step_cloud
from .models import GeneExpressionParams, gene_lyapunov

SCOPE = ("inequality checked on the listed points only; "
         "behaviour between and beyond them is not certified")


class DriftDivergenceError(PdmpError):
    """``E_x V(X(t_1))`` did not settle under a tighter truncation."""


class GridTooSmallError(PdmpError):
    """No evaluation point lies outside ``B0``."""


@dataclass
class DriftSpec:
    """Lyapunov function, candidate box ``B0 = [lower, upper]`` and points."""

    V: Callable
    lower: tuple
    upper: tuple
    points: np.ndarray
    quad: QuadratureSpec = field(default_factory=lambda: QuadratureSpec(eps=1e-9))

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        vals = np.asarray(self.V(self.points), dtype=float)
        if not np.any(np.isfinite(vals)):
            raise ValueError("V is not finite on any evaluation point")

    def in_box(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.all((X >= np.asarray(self.lower)) & (X <= np.asarray(self.upper)), axis=1)

    def with_box(self, lower, upper):
        return DriftSpec(self.V, tuple(lower), tuple(upper), self.points, self.quad)


@dataclass
class DriftReport:
    points: np.ndarray
    drift: np.ndarray
    lower: tuple
    upper: tuple
    c1: float
    c2: float
    scope: str = SCOPE

    @property
    def verdict(self):
        return bool(self.c1 > 0)

    @property
    def occupation_bound(self):
        return self.c1 / self.c2 if self.verdict else 0.0

    def to_dict(self):
        return {"B0": {"lower": list(map(float, self.lower)),
                       "upper": list(map(float, self.upper))},
                "c1": self.c1, "c2": self.c2, "verdict": self.verdict,
                "occupation_bound": self.occupation_bound, "scope": self.scope,
                "points": self.points.tolist(), "drift": self.drift.tolist()}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


# --------------------------------------------------------------------------
# drift values

def gene_drift(params: GeneExpressionParams, X, panels=400, order=4, eps=1e-12):
    """Closed-form reduction for the gene model with the linear ``V``.

    ``D(x) = int_0^inf W(t, x) exp(-Lambda_x(t)) dt`` with
    ``W = b beta2/(gamma1-gamma2) phi(pi_t x) - V(x) gamma2 exp(-gamma2 t)``.
    """
    from .models import build_gene_model

    model = build_gene_model(params)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    V = gene_lyapunov(params)(X)
    s_max = -math.log(eps) / params.rate_bounds()[0]
    s, w = ode.gauss_legendre(0.0, s_max, panels, order)
    c = params.b * params.ratio
    out = np.empty(len(X))
    step = max(1, CHUNK // (len(s) * 8))
    for a in range(0, len(X), step):
        Y, Lam = _flow_hazard(model, X[a:a + step], s)
        phi = params.hill(Y[..., 1])
        W = c * phi - V[a:a + step, None] * params.gamma2 * np.exp(-params.gamma2 * s)[None, :]
        out[a:a + step] = (W * np.exp(-Lam)) @ w
    return out


def gene_W(params: GeneExpressionParams, t, X):
    """``W(t, x)`` for the gene model and the linear ``V``."""
    from .models import build_gene_model

    X = np.atleast_2d(np.asarray(X, dtype=float))
    model = build_gene_model(params)
    Y = model.flow.closed_form(X, np.asarray(t, dtype=float))
    return (params.b * params.ratio * params.hill(Y[..., 1])
            - gene_lyapunov(params)(X) * params.gamma2 * np.exp(-params.gamma2 * np.asarray(t)))


def _expected_V(model, V, x, quad):
    pts, W, _ = one_step_cloud(model, x, quad)
    vals = np.asarray(V(pts[0]), dtype=float)
    return float(np.dot(W[0], vals) / W[0].sum())


def drift_at(model: PdmpModel, spec: DriftSpec, x):
    """``D(x)`` by quadrature over ``(theta, s)``.

    The gene model with its linear Lyapunov function goes through
    :func:`gene_drift`; everything else uses the kernel cloud, rerun at a
    hundred times smaller truncation level to detect divergent tails.
    """
    x = np.asarray(x, dtype=float)
    if getattr(spec.V, "gene_params", None) is not None and model.kernel == "gene":
        return float(gene_drift(spec.V.gene_params, x)[0])
    e1 = _expected_V(model, spec.V, x, spec.quad)
    tight = QuadratureSpec(spec.quad.eps / 100, spec.quad.s_panels, spec.quad.theta_panels,
                           spec.quad.order)
    e2 = _expected_V(model, spec.V, x, tight)
    if abs(e1 - e2) > 1e-6 * max(1.0, abs(e2)):
        raise DriftDivergenceError(f"E V(X_1) unstable under truncation at {x}: {e1} vs {e2}")
    return e2 - float(np.ravel(spec.V(x))[0])


def gene_spec_V(params: GeneExpressionParams):
    """The linear Lyapunov function tagged so :func:`drift_at` can use the
    closed-form reduction."""
    V = gene_lyapunov(params)
    V.gene_params = params
    return V


def drift_values(model: PdmpModel, spec: DriftSpec):
    if getattr(spec.V, "gene_params", None) is not None and model.kernel == "gene":
        return gene_drift(spec.V.gene_params, spec.points)
    return np.array([drift_at(model, spec, x) for x in spec.points])


def drift_monte_carlo(model: PdmpModel, V, x, n, rng):
    """``(mean, standard error)`` of ``V(X_1) - V(x)`` over ``n`` fresh steps."""
    from .simulate import step_many

    X = np.tile(np.asarray(x, dtype=float), (n, 1))
    post = step_many(model, X, rng)[0]
    v = np.asarray(V(post), dtype=float) - float(np.ravel(V(np.asarray(x, dtype=float)))[0])
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(n))


# --------------------------------------------------------------------------
# verification

def radial_shells(d, r_min, r_max, n_shells, n_dirs=16, positive=True):
    """Points on geometric shells ``r_min * q^k`` up to ``r_max``.

    In two dimensions the directions are equally spaced angles (over the
    closed first quadrant when ``positive``); in one dimension the shells
    are the points themselves.  The origin is included.
    """
    radii = np.geomspace(r_min, r_max, n_shells)
    if d == 1:
        pts = radii[:, None]
    elif d == 2:
        hi = 0.5 * math.pi if positive else 2 * math.pi
        ang = np.linspace(0.0, hi, n_dirs, endpoint=positive)
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        pts = (radii[:, None, None] * dirs[None]).reshape(-1, 2)
        pts = np.maximum(pts, 0.0) if positive else pts
    else:
        raise NotImplementedError("radial shells are provided for d <= 2; pass points")
    return np.vstack([np.zeros((1, d)), pts])


def fit_constants(in_box, D):
    """Conservative ``(c1, c2)``: worst point outside and inside ``B0``."""
    if not np.any(~in_box):
        raise GridTooSmallError("no evaluation point lies outside B0")
    c1 = -float(np.max(D[~in_box]))
    if np.any(in_box):
        c2 = c1 + float(np.max(D[in_box]))
    else:
        c2 = c1
    return c1, max(c2, c1)


def verify_drift(model: PdmpModel, spec: DriftSpec, values=None) -> DriftReport:
    D = drift_values(model, spec) if values is None else np.asarray(values, dtype=float)
    c1, c2 = fit_constants(spec.in_box(spec.points), D)
    return DriftReport(spec.points, D, tuple(spec.lower), tuple(spec.upper), c1, c2)


def search_box(model: PdmpModel, spec: DriftSpec, radii):
    """Grow ``B0 = [lower, R]^d`` over ``radii`` until the verdict holds.

    Drift values are computed once and reused for every box.  Returns the
    first passing report, or the last one tried.
    """
    D = drift_values(model, spec)
    rep = None
    for R in radii:
        s = spec.with_box(spec.lower, tuple(float(R) for _ in spec.upper))
        try:
            rep = verify_drift(model, s, D)
        except GridTooSmallError:
            break
        if rep.verdict:
            return rep
    if rep is None:
        raise GridTooSmallError("no radius leaves points outside B0")
    return rep


@dataclass
class OccupationResult:
    fraction: float
    standard_error: float
    bound: float
    steps: int
    paths: int

    @property
    def passed(self):
        return self.fraction >= 0.8 * self.bound

    def to_dict(self):
        return {"fraction": self.fraction, "standard_error": self.standard_error,
                "bound": self.bound, "threshold": 0.8 * self.bound, "passed": self.passed,
                "steps": self.steps, "paths": self.paths}


def occupation_check(model: PdmpModel, report: DriftReport, x0, N=10**4, paths=4, seed=0):
    """Fraction of chain steps ``X_1..X_N`` inside ``B0``, averaged over paths."""
    from .simulate import run_chain, streams

    lo, hi = np.asarray(report.lower), np.asarray(report.upper)
    fr = []
    for rng in streams(seed, paths):
        post, _ = run_chain(model, x0, N, rng)
        fr.append(float(np.mean(np.all((post >= lo) & (post <= hi), axis=1))))
    fr = np.asarray(fr)
    se = float(fr.std(ddof=1) / math.sqrt(paths)) if paths > 1 else float("nan")
    return OccupationResult(float(fr.mean()), se, report.occupation_bound, N, paths)
