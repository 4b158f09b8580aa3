"""Local characteristics of a semiflow with jumps.

A model is assembled from four pieces: the state space ``E``, the semiflow
``pi`` generated by a vector field ``g``, the jump intensity ``phi``, and a
jump family ``(Theta, nu, T_theta, p_theta)``.  The post-jump law is

    J(x, B) = int_Theta 1_B(T_theta(x)) p_theta(x) nu(dtheta).

Built-in models supply callables that broadcast over a leading batch axis
(``x`` of shape ``(..., d)``, ``theta`` of shape ``(..., k)``); user models
may be scalar-only and set ``vectorized=False``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import ode


class PdmpError(Exception):
    """Base class for model and simulation errors."""


class DomainExitError(PdmpError):
    """A flowed or jumped state left the state space."""


class SamplerError(PdmpError):
    """A jump-parameter sampler gave up."""


class HorizonExhaustedError(PdmpError):
    """The hazard target was not reached before the internal time cap."""


class ThinningBoundError(PdmpError):
    """The intensity exceeded the bound declared for thinning."""


class ExplosionError(PdmpError):
    """An operation needs the process past a suspected explosion."""


class NotDifferentiableError(PdmpError):
    pass


class UnboundedThetaError(PdmpError):
    """Quadrature over an unbounded parameter set without a tail bound."""


@dataclass(frozen=True)
class StateSpace:
    """``E`` as a subset of R^d.

    ``lower``/``upper`` give a coordinate box, ``discrete`` lists the
    integer-valued coordinates (modes), ``predicate`` adds any further
    restriction.  ``measure`` names the reference measure: ``"lebesgue"``,
    ``"lebesgue*counting"`` or ``"counting"``.
    """

    dimension: int
    lower: tuple | None = None
    upper: tuple | None = None
    discrete: tuple = ()
    measure: str = "lebesgue"
    predicate: Callable | None = None

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        for b in (self.lower, self.upper):
            if b is not None and len(b) != self.dimension:
                raise ValueError("bound length does not match dimension")

    @property
    def continuous_axes(self):
        return tuple(i for i in range(self.dimension) if i not in self.discrete)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dimension,) or not np.all(np.isfinite(x)):
            return False
        if self.lower is not None and np.any(x < np.asarray(self.lower)):
            return False
        if self.upper is not None and np.any(x > np.asarray(self.upper)):
            return False
        for i in self.discrete:
            if x[i] != np.round(x[i]):
                return False
        return self.predicate is None or bool(self.predicate(x))

    def admit(self, x, tol):
        """Return ``x`` if it lies in ``E``; clamp tiny excursions below
        the lower bounds; raise :class:`DomainExitError` otherwise."""
        x = np.asarray(x, dtype=float)
        if self.contains(x):
            return x
        if self.lower is not None:
            lo = np.asarray(self.lower, dtype=float)
            if np.all(x >= lo - tol):
                y = np.maximum(x, lo)
                if self.contains(y):
                    return y
        raise DomainExitError(f"state {x} left the state space")

    def admit_many(self, X, tol):
        """Vectorised :meth:`admit` for box-shaped spaces without predicate."""
        X = np.asarray(X, dtype=float)
        if self.lower is not None:
            lo = np.asarray(self.lower, dtype=float)
            if np.any(X < lo - tol):
                raise DomainExitError("state left the state space")
            X = np.maximum(X, lo)
        if self.upper is not None and np.any(X > np.asarray(self.upper)):
            raise DomainExitError("state left the state space")
        return X


@dataclass(frozen=True)
class Semiflow:
    """Solution operator of ``x' = g(x)``.

    With ``closed_form`` set, ``pi_t x`` is evaluated exactly; otherwise the
    field is integrated with Dormand-Prince at ``rtol``/``atol``.
    ``jacobian(x, t)`` is the optional closed-form ``d pi_t x / dx``.
    """

    field: Callable
    closed_form: Callable | None = None
    jacobian: Callable | None = None
    rtol: float = 1e-8
    atol: float = 1e-10

    @property
    def mode(self):
        return "closed-form" if self.closed_form is not None else "ode"

    @property
    def tolerance(self):
        return 0.0 if self.closed_form is not None else max(self.rtol, self.atol)


@dataclass(frozen=True)
class Intensity:
    """Jump rate ``phi`` with optional bounds.

    ``flow_bound(x)`` bounds ``phi(pi_s x)`` for all ``s >= 0`` and is what
    thinning uses; ``upper`` is a global fallback.  ``constant_along_flow``
    marks rates that do not change between jumps, so the holding time is
    exactly exponential.
    """

    rate: Callable
    lower: float | None = None
    upper: float | None = None
    flow_bound: Callable | None = None
    constant_along_flow: bool = False

    def bound_along_flow(self, x):
        if self.flow_bound is not None:
            return self.flow_bound(x)
        if self.upper is not None:
            return np.broadcast_to(self.upper, np.shape(x)[:-1]).astype(float) \
                if np.ndim(x) > 1 else float(self.upper)
        raise ThinningBoundError("no intensity bound available for thinning")


@dataclass(frozen=True)
class JumpFamily:
    """Transformations ``T_theta`` drawn with densities ``p_theta(x)``.

    ``kind`` is ``"continuous"`` (``Theta`` an interval box in R^k with
    Lebesgue ``nu``) or ``"discrete"`` (countable ``Theta`` with counting
    ``nu``; ``atoms(x)`` lists the parameters with nonzero weight).
    ``truncation(x, eps)`` returns ``(lo, hi)`` arrays such that the
    ``p(x)``-mass outside the box is at most ``eps``; it is required for
    quadrature over unbounded parameter sets.
    """

    transform: Callable
    weight: Callable
    sample: Callable
    kind: str = "continuous"
    theta_dim: int = 1
    support: tuple = (0.0, np.inf)
    truncation: Callable | None = None
    atoms: Callable | None = None
    jac_x: Callable | None = None
    jac_theta: Callable | None = None
    sample_many: Callable | None = None

    def __post_init__(self):
        if self.kind not in ("continuous", "discrete"):
            raise ValueError(f"unknown parameter space kind {self.kind!r}")
        if self.kind == "discrete" and self.atoms is None:
            raise ValueError("discrete jump families need atoms(x)")

    def theta_box(self, x, eps):
        lo = np.broadcast_to(np.asarray(self.support[0], float), (self.theta_dim,))
        hi = np.broadcast_to(np.asarray(self.support[1], float), (self.theta_dim,))
        tail = 0.0
        if np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)):
            return lo.copy(), hi.copy(), tail
        if self.truncation is None:
            raise UnboundedThetaError(
                "unbounded parameter set and no tail bound supplied")
        lo, hi = self.truncation(x, eps)
        return (np.atleast_1d(np.asarray(lo, float)),
                np.atleast_1d(np.asarray(hi, float)), eps)


@dataclass(frozen=True)
class PdmpModel:
    name: str
    space: StateSpace
    flow: Semiflow
    intensity: Intensity
    jumps: JumpFamily
    params: Mapping = field(default_factory=dict)
    vectorized: bool = False
    kernel: str | None = None

    @property
    def dimension(self):
        return self.space.dimension


def rejection_sampler(propose, accept_prob, max_attempts=10**6):
    """Wrap a proposal/acceptance pair into a ``sample(x, rng)`` callable.

    ``propose(x, rng)`` draws a candidate and ``accept_prob(theta, x)``
    returns its acceptance probability.  Raises :class:`SamplerError`
    after ``max_attempts`` rejections.
    """
    def sample(x, rng):
        for _ in range(max_attempts):
            theta = propose(x, rng)
            if rng.random() < accept_prob(theta, x):
                return theta
        raise SamplerError(f"no acceptance in {max_attempts} attempts")

    return sample


def _ensure_in(model, x):
    x = np.asarray(x, dtype=float)
    if not model.space.contains(x):
        raise DomainExitError(f"{x} is not in the state space of {model.name}")
    return x


def _augmented_rhs(model, x0):
    """Right-hand side for the flow state with the hazard appended."""
    flow, rate = model.flow, model.intensity.rate
    if flow.closed_form is not None:
        def rhs(t, y):
            return np.array([float(rate(flow.closed_form(x0, t)))])
    else:
        d = model.dimension

        def rhs(t, y):
            out = np.empty(d + 1)
            out[:d] = flow.field(y[:d])
            out[d] = rate(y[:d])
            return out
    return rhs


def flow_at(model: PdmpModel, x, t: float):
    """``pi_t x``; exact for closed-form flows, Dormand-Prince otherwise."""
    if t < 0:
        raise ValueError("flow time must be nonnegative")
    x = _ensure_in(model, x)
    if t == 0:
        return x.copy()
    flow = model.flow
    if flow.closed_form is not None:
        y = np.asarray(flow.closed_form(x, t), dtype=float)
    else:
        g0 = np.asarray(flow.field(x), dtype=float)
        speed = float(np.max(np.abs(g0)))
        h0 = 0.1 * (1.0 + float(np.max(np.abs(x)))) / speed if speed > 0 else t
        y = ode.integrate(lambda s, z: np.asarray(flow.field(z), dtype=float),
                          x, t, flow.rtol, flow.atol, h0=h0)
    return model.space.admit(y, 10 * max(flow.tolerance, 1e-12) * (1 + np.max(np.abs(y))))


def flow_many(model: PdmpModel, X, t):
    """Batch flow for vectorised models; ``t`` broadcasts against ``X[..., 0]``."""
    X = np.asarray(X, dtype=float)
    if model.flow.closed_form is not None and model.vectorized:
        return model.space.admit_many(model.flow.closed_form(X, np.asarray(t, float)), 1e-12)
    t = np.broadcast_to(np.asarray(t, float), X.shape[:-1])
    out = np.empty_like(X)
    for idx in np.ndindex(X.shape[:-1]):
        out[idx] = flow_at(model, X[idx], float(t[idx]))
    return out


def flow_along(model: PdmpModel, x, s):
    """``pi_s x`` for a sorted 1-d array of times ``s``, shape ``(len(s), d)``."""
    x = _ensure_in(model, x)
    s = np.asarray(s, dtype=float)
    if model.flow.closed_form is not None:
        Y = np.asarray(model.flow.closed_form(x, s), dtype=float).reshape(len(s), -1)
        return model.space.admit_many(Y, 1e-12) if model.space.predicate is None else Y
    out = np.empty((len(s), len(x)))
    y, prev = x, 0.0
    for j, sj in enumerate(s):
        y = flow_at(model, y, sj - prev)
        prev = sj
        out[j] = y
    return out


def cumulative_hazard(model: PdmpModel, x, t: float) -> float:
    """``Lambda_x(t) = int_0^t phi(pi_s x) ds``, co-integrated with the flow."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    x = _ensure_in(model, x)
    if t == 0:
        return 0.0
    if model.intensity.constant_along_flow:
        return float(model.intensity.rate(x)) * t
    flow = model.flow
    rhs = _augmented_rhs(model, x)
    if flow.closed_form is not None:
        y0 = np.zeros(1)
    else:
        y0 = np.concatenate([x, [0.0]])
    y = ode.integrate(rhs, y0, t, flow.rtol, flow.atol,
                      h0=ode.initial_step(float(model.intensity.rate(x)), t))
    return float(y[-1])


def jump_from(model: PdmpModel, x, rng):
    """Draw ``theta ~ p_.(x) nu`` and return ``(T_theta(x), theta)``."""
    x = _ensure_in(model, x)
    theta = np.atleast_1d(np.asarray(model.jumps.sample(x, rng), dtype=float))
    y = np.asarray(model.jumps.transform(theta, x), dtype=float)
    return model.space.admit(y, 1e-12), theta


def jump_many(model: PdmpModel, X, rng):
    """Batch version of :func:`jump_from` for vectorised models."""
    X = np.asarray(X, dtype=float)
    if model.jumps.sample_many is None or not model.vectorized:
        out = [jump_from(model, x, rng) for x in X]
        return (np.array([o[0] for o in out]).reshape(X.shape),
                np.array([o[1] for o in out]).reshape(X.shape[0], -1))
    theta = np.asarray(model.jumps.sample_many(X, rng), dtype=float).reshape(len(X), -1)
    Y = model.jumps.transform(theta, X)
    return model.space.admit_many(Y, 1e-12), theta


def kernel_mass(model: PdmpModel, x, eps=1e-9, panels=400, order=8):
    """``int_Theta p_theta(x) nu(dtheta)`` by quadrature or summation."""
    x = np.asarray(x, dtype=float)
    jumps = model.jumps
    if jumps.kind == "discrete":
        atoms = np.asarray(jumps.atoms(x), dtype=float).reshape(-1, jumps.theta_dim)
        return float(sum(jumps.weight(a, x) for a in atoms))
    if jumps.theta_dim != 1:
        raise NotImplementedError("quadrature normalisation implemented for k = 1")
    lo, hi, _ = jumps.theta_box(x, eps)
    nodes, w = ode.gauss_legendre(lo[0], hi[0], panels, order)
    vals = np.array([jumps.weight(np.array([n]), x) for n in nodes]) \
        if not model.vectorized else jumps.weight(nodes[:, None], np.broadcast_to(x, (len(nodes), len(x))))
    return float(np.dot(w, vals))
