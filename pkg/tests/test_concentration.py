import math

import numpy as np
import pytest

from concentration import (
    coupling_check,
    lower_isometry_check,
    moment_equivalence_check,
    samson_check,
    stationary_transfer_check,
    truncated_noise_diag,
)
from errors import ValidationError


def test_samson_inequality_holds(two_state_chain):
    rows = samson_check(two_state_chain, [0.0, 1.0], T=20, lambda_grid=[0.1, 0.5, 1.0],
                        n_mc=2000, seed=5)
    assert len(rows) == 3
    for row in rows:
        assert not row.violated
        assert row.lhs_exact <= row.rhs * (1.0 + 1e-12)
        assert abs(row.lhs_mc - row.lhs_exact) <= 4.0 * row.lhs_se + 1e-12


def test_samson_exact_side_for_constant_function(lazy_three_state):
    # g ≡ 1: левая часть равна e^{-λT}
    rows = samson_check(lazy_three_state, [1.0, 1.0, 1.0], T=6, lambda_grid=[0.5], n_mc=100, seed=1)
    assert rows[0].lhs_exact == pytest.approx(math.exp(-3.0))
    assert rows[0].lhs_mc == pytest.approx(math.exp(-3.0))


def test_samson_rejects_bad_tables(two_state_chain):
    with pytest.raises(ValidationError):
        samson_check(two_state_chain, [-1.0, 1.0], T=5, lambda_grid=[1.0], n_mc=10, seed=0)
    with pytest.raises(ValidationError):
        samson_check(two_state_chain, [1.0, 1.0, 1.0], T=5, lambda_grid=[1.0], n_mc=10, seed=0)


def _sphere_net(r):
    return [[[r], [-r]], [[-r], [r]], [[r], [r]]]


def test_lower_isometry_on_constant_norm_net(two_state_chain):
    report = lower_isometry_check(two_state_chain, _sphere_net(0.5), r=0.5, alpha=2.0, C=1.0,
                                  T=4, n_mc=500, seed=2)
    assert report.p_half == 0.0
    assert report.p_sup == 0.0
    assert report.vacuous
    assert not report.violated
    assert report.notes


def test_lower_isometry_preconditions(two_state_chain):
    with pytest.raises(ValidationError):
        lower_isometry_check(two_state_chain, [[[1.0], [0.0]]], r=0.5, alpha=2.0, C=10.0,
                             T=4, n_mc=10, seed=2)
    with pytest.raises(ValidationError):
        lower_isometry_check(two_state_chain, _sphere_net(0.5), r=0.5, alpha=2.0, C=0.5,
                             T=4, n_mc=10, seed=2)
    with pytest.raises(ValidationError):
        lower_isometry_check(two_state_chain, [], r=0.5, alpha=2.0, C=1.0, T=4, n_mc=10, seed=2)


def test_truncated_noise_scalar():
    report = truncated_noise_diag(1, 3.0, n_mc=20000, seed=7)
    assert report["second_moment_exact"] == pytest.approx(0.97071, abs=1e-3)
    assert report["second_moment_closed_form"] == pytest.approx(report["second_moment_exact"], rel=1e-10)
    assert report["second_moment_mc"] == pytest.approx(report["second_moment_exact"], abs=0.05)
    assert report["trunc_prob_exact"] == pytest.approx(0.0027, abs=1e-4)
    assert report["quad_pointwise_ok"]
    assert report["mgf_ratio_max"] <= 1.0
    assert abs(report["mean"][0]) <= 4.0 * report["mean_se"][0]


def test_truncated_noise_planar():
    report = truncated_noise_diag(2, 4.0, n_mc=5000, seed=8)
    assert "second_moment_closed_form" not in report
    assert report["cov_eig_max"] <= 1.2
    assert report["quad_trunc_mean"] <= report["three_trace_sq"] * 1.5
    with pytest.raises(ValidationError):
        truncated_noise_diag(2, 0.0, n_mc=10, seed=8)


def test_coupling_check_holds(scalar_lds):
    result = coupling_check(scalar_lds, T=50, delta=0.1, n_rep=100, seed=4)
    assert result["holds"]
    assert result["R"] > 1.0


def test_stationary_transfer_on_stationary_chain(two_state_chain):
    result = stationary_transfer_check(two_state_chain, [[[1.0], [0.0]], [[0.3], [-2.0]]], r=0.5, T=10)
    assert result["C_chi_sq"] == pytest.approx(0.0, abs=1e-20)
    assert result["C_tv"] == pytest.approx(0.0, abs=1e-12)
    assert result["holds"]
    assert result["C_direct"] <= math.sqrt(result["C_8_2"]) * (1.0 + 1e-9)


def test_stationary_transfer_sees_nonstationary_start(lazy_three_state):
    result = stationary_transfer_check(lazy_three_state, [[[1.0], [0.0], [0.0]]], r=1.0, T=5)
    assert result["chi_sq"][0] > 0.0
    assert result["C_chi_sq"] == pytest.approx(max(result["chi_sq"]))


def test_moment_equivalence(two_state_chain):
    result = moment_equivalence_check(two_state_chain, [[0.2], [1.5]], T=8, eps=1.0)
    assert result["holds"]
    assert result["B"] == pytest.approx(1.5)
    zero = moment_equivalence_check(two_state_chain, np.zeros((2, 1)), T=8, eps=1.0)
    assert zero["ratio"] == 1.0
    with pytest.raises(ValidationError):
        moment_equivalence_check(two_state_chain, [[0.2], [1.5]], T=8, eps=0.0)
