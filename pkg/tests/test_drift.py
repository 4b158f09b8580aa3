import json
import math

import numpy as np
import pytest

import oracles as O
from pdmpkit.drift import (DriftDivergenceError, DriftReport, DriftSpec, GridTooSmallError,
                           drift_at, drift_monte_carlo, drift_values, gene_W, gene_drift,
                           gene_spec_V, occupation_check, radial_shells, search_box,
                           verify_drift)
from pdmpkit.models import (GeneExpressionParams, PureDeathParams, build_gene_model,
                            build_kato_shift, build_pure_death, gene_lyapunov)

FLAT = GeneExpressionParams(kappa1=1, kappa2=1, kappa3=1, N=1)
DEFAULT = GeneExpressionParams()


def test_gene_drift_at_origin_constant_rate():
    assert gene_drift(FLAT, [(0.0, 0.0)])[0] == pytest.approx(
        FLAT.b * FLAT.beta2 / (FLAT.gamma1 - FLAT.gamma2), rel=1e-10)


def test_gene_drift_constant_rate_closed_form():
    """With phi = 1: D(x) = b r - V(x) gamma2 / (gamma2 + 1)."""
    X = np.array([(1.0, 2.0), (5.0, 0.0), (0.3, 7.0)])
    V = gene_lyapunov(FLAT)(X)
    expect = FLAT.b * FLAT.ratio - V * FLAT.gamma2 / (FLAT.gamma2 + 1)
    assert gene_drift(FLAT, X) == pytest.approx(expect, rel=1e-10)


def test_gene_drift_matches_independent_quadrature():
    for x in ((0.0, 0.0), (1.0, 1.0), (4.0, 0.5), (0.2, 6.0)):
        assert gene_drift(DEFAULT, [x])[0] == pytest.approx(O.gene_drift_quad(x), abs=1e-8)


def test_gene_drift_closed_form_and_kernel_cloud_agree():
    model = build_gene_model()
    plain = gene_lyapunov(DEFAULT)
    spec = DriftSpec(lambda X: plain(X), (0.0, 0.0), (1.0, 1.0), [(1.0, 1.0)])
    for x in ((1.0, 1.0), (3.0, 0.2)):
        assert drift_at(model, spec, x) == pytest.approx(gene_drift(DEFAULT, [x])[0], abs=1e-5)


def test_drift_quadrature_agrees_with_monte_carlo():
    model, V = build_gene_model(), gene_lyapunov(DEFAULT)
    rng = np.random.default_rng(17)
    for x in ((1.0, 1.0), (6.0, 3.0)):
        mean, se = drift_monte_carlo(model, V, x, 10**5, rng)
        assert abs(mean - gene_drift(DEFAULT, [x])[0]) < 3 * se


def test_gene_W_integrand_reproduces_drift():
    from scipy import integrate
    x = (2.0, 1.0)
    f = lambda t: float(gene_W(DEFAULT, t, [x])[0]) * math.exp(-O.gene_hazard(x, t))
    val = integrate.quad(f, 0, 80, limit=200)[0]
    assert val == pytest.approx(gene_drift(DEFAULT, [x])[0], abs=1e-7)


def test_gene_drift_negative_far_out_along_rays():
    for ang in np.linspace(0, math.pi / 2, 7):
        far = 60.0 * np.array([math.cos(ang), math.sin(ang)])
        assert gene_drift(DEFAULT, [far])[0] < -1.0


def test_pure_death_drift_and_constants():
    model = build_pure_death()
    pts = np.linspace(0.0, 10.0, 1001)[:, None]
    spec = DriftSpec(lambda X: np.asarray(X)[..., 0], (0.0,), (2.0,), pts)
    D = drift_values(model, spec)
    assert D == pytest.approx(-pts[:, 0] / 2, abs=1e-9)
    rep = verify_drift(model, spec, D)
    assert rep.verdict
    assert rep.c1 == pytest.approx(1.0, rel=0.05) and rep.c2 == pytest.approx(1.0, rel=0.05)


def test_zero_lyapunov_function_gives_negative_verdict():
    spec = DriftSpec(lambda X: np.zeros(len(np.atleast_2d(X))), (0.0,), (1.0,),
                     np.linspace(0, 5, 11)[:, None])
    rep = verify_drift(build_pure_death(), spec)
    assert not rep.verdict and rep.occupation_bound == 0.0


def test_grid_inside_box_raises():
    spec = DriftSpec(lambda X: np.asarray(X)[..., 0], (0.0,), (10.0,), [[1.0], [2.0]])
    with pytest.raises(GridTooSmallError):
        verify_drift(build_pure_death(), spec)
    with pytest.raises(ValueError):
        DriftSpec(lambda X: np.full(len(np.atleast_2d(X)), np.inf), (0.0,), (1.0,), [[1.0]])


def test_divergent_expectation_detected():
    model = build_pure_death(PureDeathParams(burst=1.0))
    spec = DriftSpec(lambda X: np.exp(1.5 * np.asarray(X)[..., 0]), (0.0,), (1.0,), [[1.0]])
    with pytest.raises(DriftDivergenceError):
        drift_at(model, spec, (1.0,))


def test_search_box_on_gene_model():
    spec = DriftSpec(gene_spec_V(DEFAULT), (0.0, 0.0), (1.0, 1.0),
                     radial_shells(2, 0.1, 60, 20, 12))
    rep = search_box(build_gene_model(), spec, range(1, 51))
    assert rep.verdict and rep.c2 >= rep.c1 > 0
    assert np.all(rep.drift[~spec.with_box(rep.lower, rep.upper).in_box(rep.points)] <= -rep.c1)


def test_occupation_whole_space_and_escaping_chain():
    model = build_gene_model()
    everything = DriftReport(np.zeros((1, 2)), np.zeros(1), (0.0, 0.0), (np.inf, np.inf), 1.0, 1.0)
    assert occupation_check(model, everything, (1.0, 1.0), N=500, paths=2).fraction == 1.0
    kato = DriftReport(np.zeros((1, 1)), np.zeros(1), (-10.0,), (10.0,), 1.0, 2.0)
    res = occupation_check(build_kato_shift(), kato, (0.0,), N=2000, paths=2)
    assert res.fraction == pytest.approx(10 / 2000) and not res.passed


def test_radial_shells_and_report_json():
    pts = radial_shells(2, 1.0, 8.0, 4, n_dirs=5)
    assert pts.shape == (21, 2) and np.all(pts >= 0)
    assert np.linalg.norm(pts[-1]) == pytest.approx(8.0)
    assert radial_shells(1, 1.0, 8.0, 4).shape == (5, 1)
    rep = DriftReport(pts, np.zeros(len(pts)), (0.0, 0.0), (1.0, 1.0), 0.5, 2.0)
    d = json.loads(rep.to_json())
    assert d["occupation_bound"] == 0.25 and "listed points" in d["scope"]
