import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diagnostics import (
    centered_probe,
    dependency_matrix_bruteforce,
    dependency_matrix_finite,
    dependency_opnorm,
    dependency_row_bound,
    dependency_rows,
    hyper_estimate,
    hyper_ratio,
    martingale_complexity_general,
    martingale_complexity_linear,
    table_probe,
    toeplitz_opnorm_bound,
)
from errors import ValidationError
from estimators import OptimizerOpts, check_erm_dominance, erm_finite, erm_glm, lse_linear
from hypotheses import FiniteTable, GlmBall, LinearBall, evaluate
from processes import (
    FiniteChainSpec,
    GlmSpec,
    LdsSpec,
    LinkFn,
    TrajectoryBatch,
    propagated_marginals,
    simulate,
)


def _lazy_chain(K, stay=0.7, init="stationary"):
    transition = np.full((K, K), (1.0 - stay) / (K - 1))
    np.fill_diagonal(transition, stay)
    return FiniteChainSpec(
        transition=transition,
        atoms=np.arange(K, dtype=float).reshape(-1, 1),
        init=init,
        target_fn=np.arange(K, dtype=float).reshape(-1, 1),
    )


# ---------------------------------------------------------------------------
# Матрица зависимости
# ---------------------------------------------------------------------------

def test_symmetric_chain_closed_form(two_state_chain):
    G = dependency_matrix_finite(two_state_chain, 12)
    for i in range(12):
        for j in range(i, 12):
            assert G.coeffs[i, j] == pytest.approx(0.5 ** ((j - i) / 2), abs=1e-12)
    assert np.all(np.tril(G.coeffs, -1) == 0.0)
    np.testing.assert_allclose(G.lag_profile(), 0.5 ** (np.arange(12) / 2), atol=1e-12)


@pytest.mark.parametrize("K,T,init", [
    (2, 6, [1.0, 0.0]),
    (3, 5, [0.6, 0.4, 0.0]),
    (4, 4, "stationary"),
])
def test_exact_matrix_matches_brute_force(K, T, init):
    spec = _lazy_chain(K, init=init)
    exact = dependency_matrix_finite(spec, T)
    brute = dependency_matrix_bruteforce(spec, T)
    np.testing.assert_allclose(exact.coeffs, brute.coeffs, atol=1e-10)


def test_brute_force_on_nonstationary_chain(lazy_three_state):
    exact = dependency_matrix_finite(lazy_three_state, 5)
    brute = dependency_matrix_bruteforce(lazy_three_state, 5)
    np.testing.assert_allclose(exact.coeffs, brute.coeffs, atol=1e-10)


def test_iid_chain_has_identity_matrix():
    spec = FiniteChainSpec(transition=[[0.3, 0.7], [0.3, 0.7]], atoms=[[0.0], [1.0]],
                           init="stationary", target_fn=[[0.0], [1.0]])
    G = dependency_matrix_finite(spec, 8)
    np.testing.assert_allclose(G.coeffs, np.eye(8), atol=1e-12)
    assert dependency_opnorm(G) == pytest.approx(1.0)


def test_dependency_caps(two_state_chain):
    with pytest.raises(ValidationError):
        dependency_matrix_finite(two_state_chain, 10, cap=5)
    with pytest.raises(ValidationError):
        dependency_matrix_bruteforce(two_state_chain, 30, cap=2 ** 10)
    with pytest.raises(ValidationError):
        dependency_matrix_finite(two_state_chain, 0)


@settings(max_examples=20, deadline=None)
@given(p=st.floats(0.05, 0.95), T=st.integers(2, 40))
def test_norm_bounds_dominate_opnorm(p, T):
    spec = FiniteChainSpec(transition=[[1 - p, p], [p, 1 - p]], atoms=[[0.0], [1.0]],
                           init="stationary", target_fn=[[0.0], [1.0]])
    G = dependency_matrix_finite(spec, T)
    norm = dependency_opnorm(G)
    assert 1.0 - 1e-12 <= norm <= dependency_row_bound(G) + 1e-9
    assert toeplitz_opnorm_bound(G.lag_profile()) == pytest.approx(dependency_row_bound(G))


def test_dependency_rows(two_state_chain):
    header, rows = dependency_rows(dependency_matrix_finite(two_state_chain, 4))
    assert header == ["i", "j", "lag", "gamma"]
    assert len(rows) == 10
    assert rows[1] == [0, 1, 1, pytest.approx(0.5 ** 0.5)]


# ---------------------------------------------------------------------------
# Гиперконтрактивность
# ---------------------------------------------------------------------------

def test_hyper_ratio_convention():
    assert hyper_ratio(0.0, 0.0, 2.0) == 1.0
    assert hyper_ratio(0.5, 0.5, 2.0) == pytest.approx(2.0)


def test_uniform_two_state_constant(chain_factory):
    spec = chain_factory(0.5)
    est = hyper_estimate(spec, table_probe(spec), T=10, n_mc=0, n_funcs=50, alpha=2.0, seed=1)
    assert est.exact
    assert est.C_hat == pytest.approx(2.0)
    assert abs(est.alpha_fit - 2.0) < 0.5


def test_constant_bounded_by_smallest_weight(lazy_three_state):
    est = hyper_estimate(lazy_three_state, table_probe(lazy_three_state), T=20, n_mc=0,
                         n_funcs=100, alpha=2.0, seed=2)
    weights = propagated_marginals(lazy_three_state, 20).mean(axis=0)
    assert est.C_hat <= 1.0 / weights.min() + 1e-9
    assert est.C_hat == pytest.approx(1.0 / weights.min())


def test_monte_carlo_hyper_needs_enough_paths(scalar_lds):
    family = LinearBall(B=1.0, dx=1, dy=1)
    probe = centered_probe(family, np.array([[0.5]]))
    with pytest.raises(ValidationError):
        hyper_estimate(scalar_lds, probe, T=10, n_mc=50, n_funcs=5, alpha=2.0, seed=1)
    with pytest.raises(ValidationError):
        hyper_estimate(scalar_lds, probe, T=10, n_mc=200, n_funcs=5, alpha=2.5, seed=1)


def test_gaussian_linear_members_near_three(scalar_lds):
    # для линейных членов на гауссовой траектории отношение близко к 3
    family = LinearBall(B=1.0, dx=1, dy=1)
    probe = centered_probe(family, np.array([[0.5]]))
    est = hyper_estimate(scalar_lds, probe, T=20, n_mc=400, n_funcs=5, alpha=2.0, seed=3)
    assert not est.exact
    assert 2.0 < est.C_hat < 5.0
    assert est.notes


# ---------------------------------------------------------------------------
# Мартингальная сложность
# ---------------------------------------------------------------------------

def _scalar_batch(rng, T=60):
    xs = rng.standard_normal((T, 1))
    noise = rng.standard_normal((T, 1))
    return TrajectoryBatch(xs=xs, ys=0.5 * xs + noise, noise=noise, seed=0, kind="lds")


def test_linear_complexity_hand_formula(rng):
    batch = _scalar_batch(rng)
    x, w = batch.xs[:, 0], batch.noise[:, 0]
    expected = 4.0 / batch.T * (x @ w) ** 2 / (x @ x)
    assert martingale_complexity_linear(batch) == pytest.approx(expected)


def test_general_matches_linear_on_large_ball(rng):
    batch = _scalar_batch(rng)
    family = LinearBall(B=100.0, dx=1, dy=1)
    general = martingale_complexity_general(batch, family, truth=np.array([[0.0]]))
    assert general == pytest.approx(martingale_complexity_linear(batch), rel=1e-6, abs=1e-10)


def test_finite_complexity_nonnegative_with_truth(two_state_chain):
    batch = simulate(two_state_chain, 80, seed=6)
    family = FiniteTable(functions=[[[0.0], [1.0]], [[1.0], [0.0]], [[0.5], [0.5]]],
                         atoms=[[0.0], [1.0]])
    assert martingale_complexity_general(batch, family, truth=0) >= 0.0


# ---------------------------------------------------------------------------
# Базовое неравенство: эмпирический избыток ERM не больше мартингальной сложности
# ---------------------------------------------------------------------------

def _empirical_excess(batch, family, fitted, truth):
    gap = evaluate(family, fitted, batch.xs) - evaluate(family, truth, batch.xs)
    return float(np.mean(np.sum(gap ** 2, axis=1)))


LDS_CASES = [
    LdsSpec(A_star=[[0.5]], H=[[1.0]]),
    LdsSpec(A_star=[[0.9, 0.2], [0.0, 0.5]], H=[[1.0, 0.0], [0.0, 1.0]]),
    LdsSpec(A_star=[[0.0, 1.0], [-0.3, 0.4]], H=[[0.5, 0.0], [0.2, 1.0]]),
]
GLM_CASES = [
    GlmSpec(A_star=[[0.5]], H=[[1.0]], link=LinkFn("leaky_relu", 0.5), P_star=[1.0], rho=0.3),
    GlmSpec(A_star=[[0.4, 0.1], [0.0, 0.3]], H=[[1.0, 0.0], [0.0, 1.0]],
            link=LinkFn("leaky_relu", 0.5), P_star=[1.0, 1.0], rho=0.3),
    GlmSpec(A_star=[[0.3, -0.2], [0.1, 0.2]], H=[[1.0, 0.0], [0.0, 1.0]],
            link=LinkFn("identity"), P_star=[1.0, 1.0], rho=0.3),
]


@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("case", range(len(LDS_CASES)))
def test_least_squares_excess_below_linear_complexity(case, seed):
    spec = LDS_CASES[case]
    batch = simulate(spec, 60, seed=seed)
    family = LinearBall(B=100.0, dx=spec.dx, dy=spec.dx)
    result = lse_linear(batch, family.B)
    excess = _empirical_excess(batch, family, result.parameter, spec.A_star)
    assert excess <= martingale_complexity_linear(batch) + 1e-10


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("case", range(len(GLM_CASES)))
def test_glm_erm_excess_below_general_complexity(case, seed):
    spec = GLM_CASES[case]
    batch = simulate(spec, 80, seed=seed)
    family = GlmBall(B=1.0, link=spec.link, dx=spec.dx)
    opts = OptimizerOpts(restarts=5, seed=seed)
    result = erm_glm(batch, family.B, family.link, opts)
    assert check_erm_dominance(batch, family, result, spec.A_star, tol=1e-6)
    excess = _empirical_excess(batch, family, result.parameter, spec.A_star)
    complexity = martingale_complexity_general(batch, family, truth=spec.A_star, opts=opts)
    assert excess <= complexity + 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_finite_erm_excess_below_finite_complexity(two_state_chain, seed):
    family = FiniteTable(functions=[[[0.0], [1.0]], [[1.0], [0.0]], [[0.3], [0.8]], [[0.0], [0.0]]],
                         atoms=[[0.0], [1.0]])
    batch = simulate(two_state_chain, 40, seed=seed)
    result = erm_finite(batch, family)
    excess = _empirical_excess(batch, family, result.parameter, 0)
    assert excess <= martingale_complexity_general(batch, family, truth=0) + 1e-12
