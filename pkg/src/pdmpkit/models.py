"""Built-in models and the name registry used by the CLI."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Callable, Sequence

import numpy as np

from .core import (Intensity, JumpFamily, PdmpModel, Semiflow, StateSpace)


# --------------------------------------------------------------------------
# gene expression with bursting

@dataclass(frozen=True)
class GeneExpressionParams:
    """mRNA/protein model: degradation ``gamma1``, ``gamma2``, translation
    ``beta2``, mean burst size ``b`` and Hill intensity
    ``(kappa1 + kappa2 x2^N) / (1 + kappa3 x2^N)``."""

    gamma1: float = 2.0
    gamma2: float = 1.0
    beta2: float = 1.0
    b: float = 1.0
    kappa1: float = 0.5
    kappa2: float = 2.0
    kappa3: float = 1.0
    N: float = 2.0

    def __post_init__(self):
        if not self.gamma1 > self.gamma2 > 0:
            raise ValueError("need gamma1 > gamma2 > 0")
        if self.beta2 < 0 or self.b <= 0:
            raise ValueError("need beta2 >= 0 and b > 0")
        if self.kappa1 <= 0 or self.kappa2 < 0 or self.kappa3 < 0 or self.N <= 0:
            raise ValueError("need kappa1 > 0, kappa2, kappa3 >= 0, N > 0")
        if self.kappa3 == 0:
            if self.N > 1:
                raise ValueError("kappa3 = 0 requires N <= 1")
            if not self.gamma2 > self.b * self.beta2 * self.kappa2 / (self.gamma1 - self.gamma2):
                raise ValueError("kappa3 = 0 requires gamma2 > b beta2 kappa2 / (gamma1 - gamma2)")

    @property
    def ratio(self):
        return self.beta2 / (self.gamma1 - self.gamma2)

    def vartheta(self, t):
        t = np.asarray(t, dtype=float)
        return self.ratio * (np.exp(-self.gamma2 * t) - np.exp(-self.gamma1 * t))

    def vartheta_max(self):
        s = math.log(self.gamma1 / self.gamma2) / (self.gamma1 - self.gamma2)
        return float(self.vartheta(s))

    def hill(self, x2):
        z = np.power(np.maximum(x2, 0.0), self.N)
        return (self.kappa1 + self.kappa2 * z) / (1.0 + self.kappa3 * z)

    def rate_bounds(self):
        """Infimum and supremum of the Hill intensity over ``x2 >= 0``."""
        if self.kappa3 == 0:
            return self.kappa1, (math.inf if self.kappa2 > 0 else self.kappa1)
        lim = self.kappa2 / self.kappa3
        return min(self.kappa1, lim), max(self.kappa1, lim)

    def as_array(self):
        return np.array([self.gamma1, self.gamma2, self.beta2, self.b,
                         self.kappa1, self.kappa2, self.kappa3, self.N])


def build_gene_model(params: GeneExpressionParams | None = None) -> PdmpModel:
    p = params or GeneExpressionParams()
    g1, g2, beta = p.gamma1, p.gamma2, p.beta2

    def field(x):
        x = np.asarray(x, dtype=float)
        return np.stack([-g1 * x[..., 0], -g2 * x[..., 1] + beta * x[..., 0]], axis=-1)

    def closed_form(x, t):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([x1 * np.exp(-g1 * t),
                         x2 * np.exp(-g2 * t) + x1 * p.vartheta(t)], axis=-1)

    def jacobian(x, t):
        return np.array([[math.exp(-g1 * t), 0.0],
                         [float(p.vartheta(t)), math.exp(-g2 * t)]])

    def rate(x):
        return p.hill(np.asarray(x, dtype=float)[..., 1])

    lo, hi = p.rate_bounds()
    increasing = p.kappa2 >= p.kappa1 * p.kappa3
    top = p.vartheta_max()

    def flow_bound(x):
        x = np.asarray(x, dtype=float)
        if not increasing:
            return np.full(x.shape[:-1], p.kappa1) if x.ndim > 1 else p.kappa1
        # x2 along the flow never exceeds x2 + x1 * max(vartheta)
        return p.hill(x[..., 1] + x[..., 0] * top)

    def transform(theta, x):
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        out = x + 0.0
        out[..., 0] = x[..., 0] + theta[..., 0]
        return out

    def weight(theta, x):
        th = np.asarray(theta, dtype=float)[..., 0]
        return np.where(th > 0, np.exp(-np.maximum(th, 0.0) / p.b) / p.b, 0.0)

    def sample(x, rng):
        return np.array([rng.exponential(p.b)])

    def sample_many(X, rng):
        return rng.exponential(p.b, size=(len(X), 1))

    def truncation(x, eps):
        return np.array([0.0]), np.array([-p.b * math.log(eps)])

    return PdmpModel(
        name="gene",
        space=StateSpace(2, lower=(0.0, 0.0)),
        flow=Semiflow(field=field, closed_form=closed_form, jacobian=jacobian),
        intensity=Intensity(rate=rate, lower=lo, upper=None if math.isinf(hi) else hi,
                            flow_bound=flow_bound),
        jumps=JumpFamily(
            transform=transform, weight=weight, sample=sample, sample_many=sample_many,
            kind="continuous", theta_dim=1, support=(0.0, math.inf), truncation=truncation,
            jac_x=lambda theta, x: np.eye(2),
            jac_theta=lambda theta, x: np.array([[1.0], [0.0]])),
        params=asdict(p),
        vectorized=True,
        kernel="gene",
    )


def gene_lyapunov(params: GeneExpressionParams):
    """``V(x) = x1 beta2 / (gamma1 - gamma2) + x2``."""
    c = params.ratio

    def V(x):
        x = np.asarray(x, dtype=float)
        return c * x[..., 0] + x[..., 1]

    return V


# --------------------------------------------------------------------------
# random switching

@dataclass(frozen=True)
class SwitchingSystem:
    """Mode-dependent flows on ``M`` subset R^d with switching rates.

    ``field(x, i)`` is ``g^i(x)``; ``rates(x, i)`` returns a mapping
    ``{j: q_j(x, i)}`` over the modes reachable from ``i``;
    ``mode_flow(x, i, t)`` optionally gives ``pi^i_t x`` in closed form
    (``t`` a scalar or a 1-d array of times, result ``t.shape + (d,)``) and
    ``mode_jacobian(x, i, t)`` its derivative in ``x``.  ``modes`` is a finite
    list, or ``None`` for the nonnegative integers.
    """

    dim: int
    field: Callable
    rates: Callable
    modes: Sequence[int] | None = None
    mode_flow: Callable | None = None
    mode_jacobian: Callable | None = None
    lower: tuple | None = None
    upper: tuple | None = None
    rates_constant_along_flow: bool = False
    rate_lower: float | None = None
    rate_upper: float | None = None
    name: str = "switching"


def build_switching_model(system: SwitchingSystem, rtol=1e-9, atol=1e-11) -> PdmpModel:
    if system.modes is not None and len(system.modes) < 2:
        raise ValueError("a switching system needs at least two modes")
    d = system.dim
    mode_set = None if system.modes is None else frozenset(int(i) for i in system.modes)

    def split(z):
        z = np.asarray(z, dtype=float)
        return z[:d], int(round(z[d]))

    def field(z):
        x, i = split(z)
        return np.concatenate([np.asarray(system.field(x, i), dtype=float), [0.0]])

    closed_form = None
    if system.mode_flow is not None:
        def closed_form(z, t):
            x, i = split(z)
            y = np.asarray(system.mode_flow(x, i, t), float)
            mode = np.full(y.shape[:-1] + (1,), float(i))
            return np.concatenate([y, mode], axis=-1)

    jacobian = None
    if system.mode_jacobian is not None:
        def jacobian(z, t):
            x, i = split(z)
            J = np.eye(d + 1)
            J[:d, :d] = system.mode_jacobian(x, i, t)
            return J

    def positive_rates(z):
        x, i = split(z)
        out = {}
        for j, q in system.rates(x, i).items():
            if j == i:
                continue
            if q < 0:
                raise ValueError("switching rates must be nonnegative")
            if q > 0:
                out[int(j)] = float(q)
        return out

    def rate(z):
        total = sum(positive_rates(z).values())
        if not math.isfinite(total):
            raise ValueError("switching rate sum diverges")
        return total

    def atoms(z):
        return np.array(sorted(positive_rates(z)), dtype=float).reshape(-1, 1)

    def weight(theta, z):
        j = int(round(float(np.asarray(theta).ravel()[0])))
        qs = positive_rates(z)
        total = sum(qs.values())
        _, i = split(z)
        if j == i:
            return 0.0
        if total == 0.0:
            return 1.0
        return qs.get(j, 0.0) / total

    def sample(z, rng):
        qs = positive_rates(z)
        total = sum(qs.values())
        if total == 0.0:
            raise ValueError("no switching possible from this state")
        u = rng.random() * total
        acc = 0.0
        for j in sorted(qs):
            acc += qs[j]
            if u < acc:
                return np.array([float(j)])
        return np.array([float(max(qs))])

    def transform(theta, z):
        z = np.array(z, dtype=float)
        z[d] = float(np.asarray(theta).ravel()[0])
        return z

    def jac_x(theta, z):
        J = np.eye(d + 1)
        J[d, d] = 0.0
        return J

    lower = None if system.lower is None else tuple(system.lower) + (0.0 if mode_set is None else min(mode_set),)
    upper = None if system.upper is None else tuple(system.upper) + (math.inf if mode_set is None else max(mode_set),)

    def in_modes(z):
        i = int(round(z[d]))
        return i >= 0 if mode_set is None else i in mode_set

    return PdmpModel(
        name=system.name,
        space=StateSpace(d + 1, lower=lower, upper=upper, discrete=(d,),
                         measure="lebesgue*counting", predicate=in_modes),
        flow=Semiflow(field=field, closed_form=closed_form, jacobian=jacobian,
                      rtol=rtol, atol=atol),
        intensity=Intensity(rate=rate, lower=system.rate_lower, upper=system.rate_upper,
                            constant_along_flow=system.rates_constant_along_flow),
        jumps=JumpFamily(transform=transform, weight=weight, sample=sample,
                         kind="discrete", theta_dim=1, atoms=atoms, jac_x=jac_x),
        params={"dim": d},
    )


def relaxation_fields(level: Callable[[int], float]):
    """Scalar fields ``g^i(x) = level(i) - x`` with their closed-form flows."""
    def field(x, i):
        return level(i) - np.asarray(x, dtype=float)

    def mode_flow(x, i, t):
        a = level(i)
        decay = np.exp(-np.asarray(t, dtype=float))[..., None]
        return a + (np.asarray(x, dtype=float) - a) * decay

    def mode_jacobian(x, i, t):
        return np.eye(len(np.atleast_1d(x))) * math.exp(-t)

    return field, mode_flow, mode_jacobian


@dataclass(frozen=True)
class BirthDeathParams:
    birth: float = 1.0
    death: float = 2.0


def birth_death_system(params: BirthDeathParams | None = None) -> SwitchingSystem:
    """Birth-death switching on modes 0, 1, 2, ... with constant rates.

    The continuous coordinate relaxes towards ``i / (i + 1)`` in mode ``i``,
    so ``M = [0, 1]`` is forward invariant.
    """
    p = params or BirthDeathParams()
    field, mode_flow, mode_jacobian = relaxation_fields(lambda i: i / (i + 1.0))

    def rates(x, i):
        out = {i + 1: p.birth}
        if i >= 1:
            out[i - 1] = p.death
        return out

    return SwitchingSystem(
        dim=1, field=field, rates=rates, modes=None, mode_flow=mode_flow,
        mode_jacobian=mode_jacobian, lower=(0.0,), upper=(1.0,),
        rates_constant_along_flow=True, rate_lower=min(p.birth, p.birth + p.death),
        rate_upper=p.birth + p.death, name="birth-death")


def build_birth_death(params: BirthDeathParams | None = None) -> PdmpModel:
    p = params or BirthDeathParams()
    model = build_switching_model(birth_death_system(p))
    return _with_params(model, asdict(p))


@dataclass(frozen=True)
class TwoModeParams:
    """Two constant fields in the plane with constant switching rates."""

    g1: tuple = (1.0, 0.0)
    g2: tuple = (0.0, 1.0)
    q12: float = 1.0
    q21: float = 1.0


def two_mode_system(params: TwoModeParams | None = None) -> SwitchingSystem:
    p = params or TwoModeParams()
    vecs = {1: np.asarray(p.g1, float), 2: np.asarray(p.g2, float)}

    def rates(x, i):
        return {2: p.q12} if i == 1 else {1: p.q21}

    return SwitchingSystem(
        dim=2, field=lambda x, i: vecs[i] + 0.0 * np.asarray(x), rates=rates,
        modes=(1, 2),
        mode_flow=lambda x, i, t: np.asarray(x, float) + np.asarray(t, float)[..., None] * vecs[i],
        mode_jacobian=lambda x, i, t: np.eye(2),
        rates_constant_along_flow=True,
        rate_lower=min(p.q12, p.q21), rate_upper=max(p.q12, p.q21), name="two-mode")


def build_two_mode(params: TwoModeParams | None = None) -> PdmpModel:
    p = params or TwoModeParams()
    return _with_params(build_switching_model(two_mode_system(p)), asdict(p))


# --------------------------------------------------------------------------
# explosive pure-jump model on the integers

@dataclass(frozen=True)
class KatoShiftParams:
    """Shift ``k -> k + 1`` at rate ``coef * |k|^power + offset``."""

    coef: float = 1.0
    power: float = 2.0
    offset: float = 1.0

    def __post_init__(self):
        if self.offset <= 0 or self.coef < 0:
            raise ValueError("rates must be positive")

    def rate(self, k):
        return self.coef * np.abs(np.asarray(k, dtype=float)) ** self.power + self.offset


def build_kato_shift(params: KatoShiftParams | None = None) -> PdmpModel:
    p = params or KatoShiftParams()

    def rate(x):
        return p.rate(np.asarray(x, dtype=float)[..., 0])

    def transform(theta, x):
        return np.asarray(x, dtype=float) + 1.0

    return PdmpModel(
        name="kato",
        space=StateSpace(1, discrete=(0,), measure="counting"),
        flow=Semiflow(field=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                      closed_form=_static_flow,
                      jacobian=lambda x, t: np.eye(1)),
        intensity=Intensity(rate=rate, lower=p.offset, constant_along_flow=True),
        jumps=JumpFamily(
            transform=transform, weight=lambda theta, x: 1.0,
            sample=lambda x, rng: np.array([1.0]),
            sample_many=lambda X, rng: np.ones((len(X), 1)),
            kind="discrete", theta_dim=1, atoms=lambda x: np.array([[1.0]]),
            jac_x=lambda theta, x: np.eye(1)),
        params=asdict(p),
        vectorized=True,
    )


# --------------------------------------------------------------------------
# pure-death toy with multiplicative jumps

@dataclass(frozen=True)
class PureDeathParams:
    """No flow, constant rate; jumps ``x -> factor * x + theta`` where
    ``theta`` is exponential with mean ``burst`` (absent when ``burst = 0``)."""

    factor: float = 0.5
    burst: float = 0.0
    rate: float = 1.0

    def __post_init__(self):
        if not 0 < self.factor < 1 or self.burst < 0 or self.rate <= 0:
            raise ValueError("need 0 < factor < 1, burst >= 0, rate > 0")


def build_pure_death(params: PureDeathParams | None = None) -> PdmpModel:
    p = params or PureDeathParams()

    def rate(x):
        return np.full(np.shape(x)[:-1], p.rate) if np.ndim(x) > 1 else p.rate

    if p.burst == 0:
        jumps = JumpFamily(
            transform=lambda theta, x: p.factor * np.asarray(x, dtype=float),
            weight=lambda theta, x: 1.0,
            sample=lambda x, rng: np.array([0.0]),
            sample_many=lambda X, rng: np.zeros((len(X), 1)),
            kind="discrete", atoms=lambda x: np.array([[0.0]]),
            jac_x=lambda theta, x: p.factor * np.eye(1))
    else:
        jumps = JumpFamily(
            transform=lambda theta, x: p.factor * np.asarray(x, dtype=float)
            + np.asarray(theta, dtype=float),
            weight=lambda theta, x: np.where(np.asarray(theta)[..., 0] > 0,
                                             np.exp(-np.abs(np.asarray(theta)[..., 0]) / p.burst)
                                             / p.burst, 0.0),
            sample=lambda x, rng: np.array([rng.exponential(p.burst)]),
            sample_many=lambda X, rng: rng.exponential(p.burst, size=(len(X), 1)),
            kind="continuous", support=(0.0, math.inf),
            truncation=lambda x, eps: (np.array([0.0]), np.array([-p.burst * math.log(eps)])),
            jac_x=lambda theta, x: p.factor * np.eye(1),
            jac_theta=lambda theta, x: np.eye(1))

    return PdmpModel(
        name="pure-death",
        space=StateSpace(1, lower=(0.0,)),
        flow=Semiflow(field=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                      closed_form=_static_flow,
                      jacobian=lambda x, t: np.eye(1)),
        intensity=Intensity(rate=rate, lower=p.rate, upper=p.rate, constant_along_flow=True),
        jumps=jumps,
        params=asdict(p),
        vectorized=True,
    )


# --------------------------------------------------------------------------
# heavy-tailed holding times

@dataclass(frozen=True)
class HeavyTailParams:
    """Unit drift ``x' = 1`` with rate ``1 / (offset + x)`` and reset to 0.

    The hazard grows only logarithmically, so it still diverges but the
    mean holding time is infinite.
    """

    offset: float = 1.0

    def __post_init__(self):
        if self.offset <= 0:
            raise ValueError("offset must be positive")


def build_heavy_tail(params: HeavyTailParams | None = None) -> PdmpModel:
    p = params or HeavyTailParams()

    def rate(x):
        return 1.0 / (p.offset + np.asarray(x, dtype=float)[..., 0])

    return PdmpModel(
        name="heavy-tail",
        space=StateSpace(1, lower=(0.0,)),
        flow=Semiflow(field=lambda x: np.ones_like(np.asarray(x, dtype=float)),
                      closed_form=lambda x, t: np.asarray(x, dtype=float)
                      + np.asarray(t, dtype=float)[..., None],
                      jacobian=lambda x, t: np.eye(1)),
        intensity=Intensity(rate=rate, flow_bound=rate),
        jumps=JumpFamily(
            transform=lambda theta, x: 0.0 * np.asarray(x, dtype=float),
            weight=lambda theta, x: 1.0,
            sample=lambda x, rng: np.array([0.0]),
            sample_many=lambda X, rng: np.zeros((len(X), 1)),
            kind="discrete", atoms=lambda x: np.array([[0.0]]),
            jac_x=lambda theta, x: np.zeros((1, 1))),
        params=asdict(p),
        vectorized=True,
    )


def _static_flow(x, t):
    return np.asarray(x, dtype=float) + 0.0 * np.asarray(t, dtype=float)[..., None]


def _with_params(model, params):
    return PdmpModel(model.name, model.space, model.flow, model.intensity, model.jumps,
                     params, model.vectorized, model.kernel)


# --------------------------------------------------------------------------
# registry

REGISTRY = {
    "gene": (GeneExpressionParams, build_gene_model),
    "birth-death": (BirthDeathParams, build_birth_death),
    "two-mode": (TwoModeParams, build_two_mode),
    "kato": (KatoShiftParams, build_kato_shift),
    "pure-death": (PureDeathParams, build_pure_death),
    "heavy-tail": (HeavyTailParams, build_heavy_tail),
}


def model_names():
    return sorted(REGISTRY)


def param_names(name):
    cls, _ = REGISTRY[name]
    return [f.name for f in fields(cls)]


def build_model(name, **params):
    """Build a registered model from keyword parameters.

    Unknown names raise ``KeyError``; unknown or invalid parameters raise
    ``TypeError``/``ValueError`` from the parameter class.
    """
    if name not in REGISTRY:
        raise KeyError(f"unknown model {name!r}; known: {', '.join(model_names())}")
    cls, builder = REGISTRY[name]
    norm = {k: tuple(v) if isinstance(v, list) else v for k, v in params.items()}
    return builder(cls(**norm))


def rate_range(model):
    """``(inf phi, sup phi)`` as declared by the model (``None`` if unknown)."""
    return model.intensity.lower, model.intensity.upper
