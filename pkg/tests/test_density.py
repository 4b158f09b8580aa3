import csv
import json

import numpy as np
import pytest

import oracles as O
from pdmpkit.core import ExplosionError
from pdmpkit.density import (DensityEstimate, check_r0v, chain_samples, estimate_chain_density,
                             estimate_flow_density, flow_density_from_chain, positivity_probe,
                             resample, stability_probe, stationarity_residual)
from pdmpkit.grid import GridSpec
from pdmpkit.models import (PureDeathParams, build_gene_model, build_heavy_tail,
                            build_kato_shift, build_pure_death)

GENE_GRID = GridSpec((0.0, 0.0), (6.0, 3.0), (12, 12))


def test_single_sample_after_burn_in():
    est = estimate_chain_density(build_gene_model(), (1.0, 1.0), 11, GENE_GRID, burn_in=10)
    assert est.n_samples == 1 and est.masses.sum() == 1
    with pytest.raises(ValueError):
        estimate_chain_density(build_gene_model(), (1.0, 1.0), 10, GENE_GRID, burn_in=10)


def test_chain_samples_pool_paths():
    X = chain_samples(build_gene_model(), (1.0, 1.0), 100, 20, seed=1, paths=3)
    assert X.shape == (240, 2)


def test_time_average_matches_survival_weighted_chain():
    model = build_gene_model()
    flow = estimate_flow_density(model, (1.0, 1.0), 2000.0, GENE_GRID, seed=3, burn_in=20.0)
    states = chain_samples(model, (1.0, 1.0), 20_000, 200, seed=4)
    linked = flow_density_from_chain(model, states, GENE_GRID)
    assert flow.tv(linked) < 0.05


def test_short_horizon_stays_in_start_cell():
    est = estimate_flow_density(build_gene_model(), (1.1, 1.1), 1e-3, GENE_GRID, dt=1e-5)
    cell = GENE_GRID.cell_index([(1.1, 1.1)])[0]
    assert est.probabilities[cell] == 1.0
    with pytest.raises(ValueError):
        estimate_flow_density(build_gene_model(), (1.0, 1.0), 0.0, GENE_GRID)


def _estimate_from(grid, masses, n, outside=None):
    return DensityEstimate(grid, np.asarray(masses, float) * n, n, outside=outside)


def test_residual_large_for_point_mass_small_for_exact_law():
    grid = GridSpec((0.0,), (12.0,), (50,))
    point = np.zeros(51)
    point[40] = 1.0
    assert stationarity_residual(build_pure_death(PureDeathParams(burst=1.0)),
                                 _estimate_from(grid, point, 10**5), seed=1) > 0.3
    agg, overflow = O.pure_death_stationary(factor=0.5, burst=1.0, upper=12.0, bins=50)
    exact = np.append(agg, overflow)
    est = _estimate_from(grid, exact / exact.sum(), 10**5, outside=np.array([[12.5]]))
    assert stationarity_residual(build_pure_death(PureDeathParams(burst=1.0)), est, seed=2) < 0.02


def test_residual_needs_enough_samples():
    est = estimate_chain_density(build_gene_model(), (1.0, 1.0), 200, GENE_GRID)
    with pytest.raises(ValueError):
        stationarity_residual(build_gene_model(), est)


def test_resample_reproduces_histogram_and_outside_pool():
    est = estimate_chain_density(build_gene_model(), (1.0, 1.0), 30_000, GridSpec(
        (0.0, 0.0), (2.0, 1.0), (4, 4)), seed=5)
    assert est.out_of_box_mass > 0 and len(est.outside) > 0
    X = resample(est, 50_000, np.random.default_rng(0))
    assert est.tv(_estimate_from(est.grid, est.grid.histogram(X), 1)) < 0.01
    bare = DensityEstimate(est.grid, est.masses, est.n_samples)
    with pytest.raises(ValueError):
        resample(bare, 10, np.random.default_rng(0))


def test_positivity_probe_counts_eligible_cells():
    grid = GridSpec((0.0,), (4.0,), (4,))
    ref = _estimate_from(grid, [0.5, 0.5, 1e-9, 0.0, 0.0], 100)
    test = _estimate_from(grid, [1.0, 0.0, 0.0, 0.0, 0.0], 100)
    probe = positivity_probe(ref, test)
    assert probe.eligible == 2 and probe.empty == 1 and not probe.passed


def test_identical_starts_give_small_distance():
    grid = GridSpec((0.0, 0.0), (5.0, 3.0), (10, 10))
    curves = stability_probe(build_gene_model(), [(1.0, 1.0), (1.0, 1.0)], [5.0], grid,
                             n_paths=10**5, seed=9)
    assert curves.distances.shape == (1, 1) and curves.distances[0, 0] < 0.06
    with pytest.raises(ValueError):
        stability_probe(build_gene_model(), [(1.0, 1.0)], [5.0], grid)


def test_stability_probe_refuses_exploding_model():
    grid = GridSpec((0.0,), (50.0,), (50,), discrete=(0,))
    with pytest.raises(ExplosionError):
        stability_probe(build_kato_shift(), [(0.0,), (1.0,)], [3.0], grid, n_paths=50,
                        max_jumps=2000)


def test_r0v_constant_rate_is_reciprocal():
    model = build_pure_death(PureDeathParams(burst=1.0, rate=2.0))
    est = estimate_chain_density(model, (1.0,), 20_000, GridSpec((0.0,), (10.0,), (20,)), seed=1)
    rep = check_r0v(model, est, M=20_000, seed=2)
    assert abs(rep.estimate - 0.5) < 3 * rep.standard_error
    assert rep.samples == 40_000 and rep.stable


def test_r0v_heavy_tail_surfaces_large_relative_error():
    """Holding times with infinite mean: the doubling flag need not trip (the
    standard error inflates with the shift), but the report exposes a
    relative standard error far above the finite-mean case."""
    grid = GridSpec((0.0,), (20.0,), (20,))
    est = DensityEstimate(grid, np.r_[1.0, np.zeros(20)] * 10**4, 10**4)
    heavy = check_r0v(build_heavy_tail(), est, M=10**4, seed=0)
    tame = check_r0v(build_pure_death(PureDeathParams(rate=2.0)), est, M=10**4, seed=0)
    assert heavy.standard_error / heavy.estimate > 5 * tame.standard_error / tame.estimate
    assert heavy.stable == (heavy.shift < 3 * heavy.standard_error)
    assert set(heavy.to_dict()) >= {"estimate", "estimate_half", "shift", "stable"}


def test_refined_estimate_coarsens_to_coarse_estimate():
    model = build_gene_model()
    fine = estimate_chain_density(model, (1.0, 1.0), 5000, GENE_GRID.refine(3), seed=8)
    coarse = estimate_chain_density(model, (1.0, 1.0), 5000, GENE_GRID, seed=8)
    assert np.array_equal(fine.coarsened(GENE_GRID, 3).masses, coarse.masses)


def test_marginal_and_outputs(tmp_path):
    est = estimate_chain_density(build_gene_model(), (1.0, 1.0), 2000, GENE_GRID, seed=2)
    m = est.marginal(0)
    assert len(m) == 13 and m.sum() == pytest.approx(1.0)
    est.to_csv(tmp_path / "d.csv")
    rows = list(csv.reader(open(tmp_path / "d.csv")))
    assert rows[0] == ["i0", "i1", "mass"] and len(rows) == GENE_GRID.n_cells + 2
    est.to_json(tmp_path / "d.json")
    meta = json.load(open(tmp_path / "d.json"))
    assert meta["n_samples"] == est.n_samples and meta["burn_in"] == 200
    assert meta["in_box_mass"] + meta["out_of_box_mass"] == pytest.approx(1.0)
    assert est.density() == pytest.approx(est.probabilities[:-1] / 0.125)
