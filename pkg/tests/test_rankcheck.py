import json
import math

import numpy as np
import pytest

import oracles as O
from pdmpkit.kernels import ComposedJumpMap
from pdmpkit.models import (PureDeathParams, build_birth_death, build_gene_model,
                            build_kato_shift, build_pure_death, build_two_mode)
from pdmpkit.rankcheck import (fd_jacobian_chain, fd_jacobian_continuous, jacobian_chain,
                               jacobian_continuous, limit_matrix_chain,
                               limit_matrix_continuous, numeric_rank, rank_report,
                               search_rank_certificate)

G = O.GENE


def cmap_of(model, thetas, times):
    return ComposedJumpMap(model, tuple((th,) if np.isscalar(th) else th for th in thetas), times)


def test_gene_one_jump_matrix_matches_closed_form():
    model = build_gene_model()
    for x, th, s in (((1.0, 0.5), 0.3, 0.7), ((0.2, 3.0), 2.0, 0.05)):
        J = jacobian_chain(model, x, cmap_of(model, [th], (s,)))
        assert J == pytest.approx(O.gene_jacobian_n1(x, s), abs=1e-12)


def test_gene_one_jump_s_only_is_rank_one():
    model = build_gene_model()
    rep = rank_report(model, (1.0, 0.5), cmap_of(model, [0.3], (0.7,)), mode="s-only")
    assert rep.rank == 1 and not rep.verdict and rep.status == "failed"


def test_gene_limit_column_is_the_vector_field():
    model = build_gene_model()
    M, ys = limit_matrix_chain(model, (1.5, 0.4), [0.2])
    assert M[:, 0] == pytest.approx([-G["gamma1"] * 1.5, -G["gamma2"] * 0.4 + G["beta2"] * 1.5])
    assert numeric_rank(M)[0] == 1
    assert ys[-1] == pytest.approx([1.7, 0.4])


def test_gene_two_jump_limit_determinant():
    """s-only limit columns g(x) and g(x + theta e_1) have det gamma1 gamma2 theta x2."""
    model = build_gene_model()
    x, th = np.array([1.0, 0.8]), 0.6
    M, _ = limit_matrix_chain(model, x, [th, 0.4])
    assert abs(np.linalg.det(M)) == pytest.approx(G["gamma1"] * G["gamma2"] * th * x[1], rel=1e-12)
    # lower semicontinuity: full rank persists for small positive times
    J = jacobian_chain(model, x, cmap_of(model, [th, 0.4], (1e-4, 1e-4)), mode="s-only")
    assert numeric_rank(J)[0] == 2
    assert J == pytest.approx(M, abs=1e-2)  # first order in s


def test_continuous_limit_subtracts_final_field():
    model = build_gene_model()
    Mc = limit_matrix_continuous(model, (1.0, 1.0), [0.5])
    Mch, ys = limit_matrix_chain(model, (1.0, 1.0), [0.5])
    g = np.array([-G["gamma1"] * ys[-1][0], -G["gamma2"] * ys[-1][1] + G["beta2"] * ys[-1][0]])
    assert Mc == pytest.approx(Mch - g[:, None])


def test_continuous_matrix_matches_theta_columns_oracle():
    model = build_gene_model()
    cm = cmap_of(model, [0.4, 1.1], (0.3, 0.5))
    J = jacobian_continuous(model, (1.0, 1.0), cm, t=2.0)
    c1, c3 = O.gene_n2_theta_columns(0.5, t=2.0, s1=0.3)
    assert J[:, 0] == pytest.approx(c1, abs=1e-12) and J[:, 2] == pytest.approx(c3, abs=1e-12)
    with pytest.raises(ValueError):
        jacobian_continuous(model, (1.0, 1.0), cm, t=0.8)


@pytest.mark.parametrize("builder,x,thetas,times", [
    (build_gene_model, (1.0, 0.5), [0.3, 1.2, 0.1], (0.4, 0.2, 0.9)),
    (build_birth_death, (0.3, 1.0), [2.0, 1.0], (0.3, 0.6)),
    (build_two_mode, (0.0, 0.0, 1.0), [2.0, 1.0], (0.5, 0.25)),
    (lambda: build_pure_death(PureDeathParams(burst=1.0)), (2.0,), [0.5, 0.7], (0.2, 0.3)),
])
def test_analytic_and_finite_difference_agree(builder, x, thetas, times):
    model = builder()
    cm = cmap_of(model, thetas, times)
    for mode in ("s-only", "theta-and-s"):
        A, F = jacobian_chain(model, x, cm, mode), fd_jacobian_chain(model, x, cm, mode)
        assert A.shape == F.shape
        assert np.max(np.abs(A - F)) <= max(1e-5, 1e-4 * np.max(np.abs(F)))
        A = jacobian_continuous(model, x, cm, sum(times) + 1.0, mode)
        F = fd_jacobian_continuous(model, x, cm, sum(times) + 1.0, mode)
        assert np.max(np.abs(A - F)) <= max(1e-5, 1e-4 * np.max(np.abs(F)))


def test_switching_certified_off_equilibrium_only():
    model = build_birth_death()
    rep = rank_report(model, (0.2, 0.0), cmap_of(model, [1.0], (0.3,)))
    assert rep.verdict and rep.dimension == 1
    assert rep.singular_values[0] == pytest.approx(0.2 * math.exp(-0.3))
    still = rank_report(model, (0.0, 0.0), cmap_of(model, [1.0], (0.3,)))
    assert still.rank == 0 and not still.verdict


def test_additive_jump_in_one_dimension_certified_at_one_step():
    model = build_pure_death(PureDeathParams(burst=1.0))
    rep = search_rank_certificate(model, (2.0,), max_n=1)
    assert rep.status == "certified" and rep.rank == 1 and len(rep.thetas) == 1


def test_degenerate_model_is_inconclusive():
    rep = search_rank_certificate(build_pure_death(), (2.0,), max_n=2, budget=8)
    assert rep.status == "inconclusive" and rep.rank == 0


def test_pure_jump_on_counting_space_is_vacuously_certified():
    rep = search_rank_certificate(build_kato_shift(), (1.0,), max_n=1)
    assert rep.dimension == 0 and rep.verdict


def test_gene_certified_within_two_jumps():
    rep = search_rank_certificate(build_gene_model(), (1.0, 1.0), max_n=2,
                                  rng=np.random.default_rng(2))
    assert rep.status == "certified" and rep.weight > 0


def test_empty_sequence_and_bad_arguments():
    model = build_gene_model()
    rep = rank_report(model, (1.0, 1.0), ComposedJumpMap(model))
    assert rep.rank == 0 and not rep.verdict
    with pytest.raises(ValueError):
        search_rank_certificate(model, (1.0, 1.0), max_n=5)
    with pytest.raises(ValueError):
        jacobian_chain(model, (1.0, 1.0), cmap_of(model, [0.1], (0.1,)), mode="theta")


def test_numeric_rank_threshold():
    assert numeric_rank(np.diag([1.0, 1e-9]))[0] == 1
    assert numeric_rank(np.diag([1.0, 1e-7]))[0] == 2
    assert numeric_rank(np.zeros((2, 2)))[0] == 0


def test_report_json_round_trip():
    model = build_gene_model()
    rep = rank_report(model, (1.0, 1.0), cmap_of(model, [0.3], (0.2,)), t=1.0)
    d = json.loads(rep.to_json())
    assert d["rank"] == rep.rank and d["horizon"] == 1.0 and d["matrix"] == "continuous:theta-and-s"
    assert set(d) >= {"singular_values", "tau_rank", "verdict", "status", "weight"}
