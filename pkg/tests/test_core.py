import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

import oracles as O
from pdmpkit.core import (DomainExitError, JumpFamily, SamplerError, Semiflow, StateSpace,
                          ThinningBoundError, UnboundedThetaError, cumulative_hazard, flow_along,
                          flow_at, flow_many, jump_from, jump_many, kernel_mass,
                          rejection_sampler)
from pdmpkit.models import (GeneExpressionParams, PureDeathParams, build_birth_death,
                            build_gene_model, build_model, build_pure_death, model_names)


def ode_gene(params=None):
    """The gene model with its closed form removed, so flows are integrated."""
    m = build_gene_model(params)
    return replace(m, flow=Semiflow(field=m.flow.field, rtol=1e-10, atol=1e-12), kernel=None)


def sample_state(name, rng):
    if name == "gene":
        return rng.uniform(0, 5, 2)
    if name == "birth-death":
        return np.array([rng.uniform(0, 1), rng.integers(0, 5)], float)
    if name == "two-mode":
        return np.array([*rng.uniform(-3, 3, 2), rng.integers(1, 3)], float)
    if name == "kato":
        return np.array([float(rng.integers(-3, 6))])
    return rng.uniform(0, 5, 1)


def test_gene_flow_closed_form_value():
    model = build_gene_model(GeneExpressionParams(kappa1=1, kappa2=1, kappa3=1, N=1))
    y = flow_at(model, (1.0, 0.0), 1.0)
    assert y == pytest.approx([math.exp(-2), math.exp(-1) - math.exp(-2)], abs=1e-14)
    assert y == pytest.approx([0.13534, 0.23254], abs=1e-5)


def test_gene_flow_matches_reference_ode():
    sol = integrate.solve_ivp(lambda t, x: [-2 * x[0], -x[1] + x[0]], (0, 1), [1.0, 0.0],
                              rtol=1e-12, atol=1e-14)
    assert flow_at(build_gene_model(), (1.0, 0.0), 1.0) == pytest.approx(sol.y[:, -1], abs=1e-10)


@pytest.mark.parametrize("name", model_names())
def test_flow_at_zero_time_is_identity(name):
    model = build_model(name)
    x = sample_state(name, np.random.default_rng(1))
    assert np.array_equal(flow_at(model, x, 0.0), x)


def test_gene_origin_is_fixed():
    model = build_gene_model()
    for t in (0.1, 1.0, 50.0):
        assert np.array_equal(flow_at(model, (0.0, 0.0), t), [0.0, 0.0])


def test_ode_flow_matches_closed_form():
    closed, ode = build_gene_model(), ode_gene()
    for x, t in (((1.0, 2.0), 0.3), ((4.0, 0.0), 3.0), ((0.5, 0.5), 10.0)):
        assert flow_at(ode, x, t) == pytest.approx(flow_at(closed, x, t), rel=1e-8, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(x1=st.floats(0, 10), x2=st.floats(0, 10), t=st.floats(0, 5), s=st.floats(0, 5))
def test_semigroup_property(x1, x2, t, s):
    for model in (build_gene_model(), ode_gene()):
        tol = 10 * max(model.flow.tolerance, 1e-13) * (1 + x1 + x2)
        a = flow_at(model, (x1, x2), t + s)
        b = flow_at(model, flow_at(model, (x1, x2), s), t)
        assert np.max(np.abs(a - b)) <= tol


@settings(max_examples=40, deadline=None)
@given(x1=st.floats(0, 50), x2=st.floats(0, 50), t=st.floats(0, 100))
def test_gene_flow_forward_invariant(x1, x2, t):
    assert build_gene_model().space.contains(flow_at(build_gene_model(), (x1, x2), t))


def test_flow_many_and_flow_along_agree_with_flow_at():
    model = build_gene_model()
    X = np.random.default_rng(2).uniform(0, 4, (6, 2))
    t = np.linspace(0.1, 3, 6)
    ref = np.array([flow_at(model, x, s) for x, s in zip(X, t)])
    assert flow_many(model, X, t) == pytest.approx(ref, abs=1e-14)
    along = flow_along(ode_gene(), X[0], t)
    assert along == pytest.approx(np.array([flow_at(model, X[0], s) for s in t]), rel=1e-7)


def test_negative_time_and_outside_state_rejected():
    model = build_gene_model()
    with pytest.raises(ValueError):
        flow_at(model, (1.0, 1.0), -1.0)
    with pytest.raises(DomainExitError):
        flow_at(model, (-1.0, 1.0), 1.0)


def test_state_space_admit_clamps_small_excursions_only():
    E = StateSpace(2, lower=(0.0, 0.0))
    assert np.array_equal(E.admit(np.array([-1e-14, 1.0]), 1e-12), [0.0, 1.0])
    with pytest.raises(DomainExitError):
        E.admit(np.array([-1e-3, 1.0]), 1e-12)
    assert not E.contains([1.0])
    assert not E.contains([np.nan, 1.0])
    S = StateSpace(2, discrete=(1,))
    assert S.contains([0.3, 2.0]) and not S.contains([0.3, 2.5])
    assert S.continuous_axes == (0,)


def test_jump_from_gene_adds_burst_to_mrna(rng):
    model = build_gene_model()
    x = np.array([1.5, 0.7])
    y, theta = jump_from(model, x, rng)
    assert y == pytest.approx([1.5 + theta[0], 0.7])
    assert theta[0] > 0


def test_jump_from_switching_changes_mode_only(rng):
    model = build_birth_death()
    y, theta = jump_from(model, (0.3, 2.0), rng)
    assert y[0] == 0.3 and y[1] == theta[0] and theta[0] in (1.0, 3.0)


def test_burst_sizes_have_unit_mean_and_exponential_law(rng):
    model = build_gene_model()
    X = np.tile([1.0, 1.0], (10**5, 1))
    _, theta = jump_many(model, X, rng)
    assert theta.mean() == pytest.approx(1.0, abs=0.02)
    assert stats.kstest(theta[:, 0], "expon").statistic < 0.01


@pytest.mark.parametrize("name", model_names() + ["pure-death-burst"])
def test_jump_kernel_normalised(name):
    model = (build_pure_death(PureDeathParams(burst=1.0)) if name == "pure-death-burst"
             else build_model(name))
    base = "pure-death" if name == "pure-death-burst" else name
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = sample_state(base, rng)
        assert kernel_mass(model, x) == pytest.approx(1.0, abs=1e-6)


def test_cumulative_hazard_constant_rate():
    model = build_pure_death(PureDeathParams(rate=2.5))
    assert cumulative_hazard(model, (3.0,), 1.7) == pytest.approx(2.5 * 1.7)


def test_cumulative_hazard_gene_at_fixed_point_is_time():
    model = build_gene_model(GeneExpressionParams(kappa1=1, kappa2=1, kappa3=1, N=1))
    assert cumulative_hazard(model, (0.0, 0.0), 3.0) == pytest.approx(3.0, rel=1e-10)


def test_cumulative_hazard_gene_matches_adaptive_quadrature():
    ref = O.gene_hazard((1.0, 1.0), 1.0)
    assert cumulative_hazard(build_gene_model(), (1.0, 1.0), 1.0) == pytest.approx(ref, abs=1e-8)
    assert cumulative_hazard(ode_gene(), (1.0, 1.0), 1.0) == pytest.approx(ref, abs=1e-8)


@settings(max_examples=25, deadline=None)
@given(x1=st.floats(0, 10), x2=st.floats(0, 10), t=st.floats(0, 5), dt=st.floats(1e-3, 5))
def test_hazard_strictly_increasing(x1, x2, t, dt):
    model = build_gene_model()
    assert cumulative_hazard(model, (x1, x2), t + dt) > cumulative_hazard(model, (x1, x2), t)
    assert cumulative_hazard(model, (x1, x2), 0.0) == 0.0


def test_rejection_sampler_caps_attempts(rng):
    sample = rejection_sampler(lambda x, r: r.random(), lambda th, x: 0.0, max_attempts=50)
    with pytest.raises(SamplerError):
        sample(np.zeros(1), rng)
    ok = rejection_sampler(lambda x, r: r.random(), lambda th, x: 1.0)
    assert 0 <= ok(np.zeros(1), rng) < 1


def test_unbounded_theta_needs_tail_bound():
    fam = JumpFamily(transform=lambda th, x: x, weight=lambda th, x: 1.0,
                     sample=lambda x, r: np.zeros(1))
    with pytest.raises(UnboundedThetaError):
        fam.theta_box(np.zeros(1), 1e-6)
    with pytest.raises(ValueError):
        JumpFamily(transform=None, weight=None, sample=None, kind="discrete")


def test_intensity_bound_missing_raises():
    model = build_model("kato")
    with pytest.raises(ThinningBoundError):
        model.intensity.bound_along_flow(np.array([1.0]))
