import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from errors import ValidationError
from hypotheses import (
    CosineBasis,
    Ellipsoid,
    FiniteTable,
    GlmBall,
    LinearBall,
    ball_grid,
    certify_cover,
    check_realizable,
    contains,
    cover_finite,
    cover_linear,
    cover_rows,
    ellipsoid_cover,
    ellipsoid_hyper_constant,
    ellipsoid_m_eps,
    ellipsoid_tail_bound,
    evaluate,
    family_from_dict,
    parameter_norm,
    probe_members,
    sample_member,
    scale_member,
)
from processes import LinkFn
from utils import make_rng


def test_linear_evaluate_single_and_batch():
    family = LinearBall(B=2.0, dx=2, dy=1)
    member = np.array([[1.0, -1.0]])
    assert evaluate(family, member, np.array([2.0, 1.0])).shape == (1,)
    out = evaluate(family, member, np.array([[2.0, 1.0], [0.0, 3.0]]))
    np.testing.assert_allclose(out, [[1.0], [-3.0]])


def test_glm_evaluate_applies_link():
    family = GlmBall(B=1.0, link=LinkFn("leaky_relu", 0.5), dx=1)
    out = evaluate(family, np.array([[1.0]]), np.array([[-2.0], [2.0]]))
    np.testing.assert_allclose(out, [[-1.0], [2.0]])


def test_table_lookup_and_non_atom():
    family = FiniteTable(functions=[[[1.0], [2.0]], [[3.0], [4.0]]], atoms=[[0.0], [1.0]])
    np.testing.assert_allclose(evaluate(family, 1, np.array([[1.0], [0.0]])), [[4.0], [3.0]])
    with pytest.raises(ValidationError):
        family.state_index([[0.5]])


def test_ellipsoid_rejects_heavy_weights():
    with pytest.raises(ValidationError):
        Ellipsoid(beta=1.0, B_basis=math.sqrt(2), q_growth=0.0, mu=[1.0])


def test_cosine_basis_is_orthonormal():
    basis = CosineBasis()
    x = (np.arange(20000) + 0.5) / 20000
    phi = basis(x, 4)
    gram = phi.T @ phi / len(x)
    np.testing.assert_allclose(gram, np.eye(4), atol=1e-6)


def test_family_from_dict_unknown_kind():
    with pytest.raises(ValidationError):
        family_from_dict({"kind": "spline"})


@pytest.mark.parametrize("doc", [
    {"kind": "linear_ball", "d_x": 1},
    {"kind": "linear_ball", "B": "big", "d_x": 1},
    {"kind": "ellipsoid", "beta": 1.0},
    {"kind": "ellipsoid", "beta": 1.0, "B_basis": 1.5, "q_growth": 0.0, "mu": [0.1], "basis": "cosine"},
    "linear_ball",
])
def test_malformed_family_document(doc):
    with pytest.raises(ValidationError):
        family_from_dict(doc)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32))
def test_sampled_members_belong_to_family(seed):
    rng = make_rng(seed)
    ball = LinearBall(B=1.5, dx=2, dy=2)
    ellipsoid = Ellipsoid(beta=0.5, B_basis=math.sqrt(2), q_growth=0.0, mu=np.exp(-np.arange(1, 6)))
    assert contains(ball, sample_member(ball, rng))
    theta = sample_member(ellipsoid, rng)
    assert parameter_norm(ellipsoid, theta) <= 1.0 + 1e-9


def test_scaling_finite_table_rejected():
    family = FiniteTable(functions=[[[1.0], [2.0]]], atoms=[[0.0], [1.0]])
    with pytest.raises(ValidationError):
        scale_member(family, 0, 0.5)
    np.testing.assert_allclose(scale_member(LinearBall(1.0, 1, 1), [[0.8]], 0.5), [[0.4]])


def test_check_realizable(two_state_chain, scalar_lds):
    table = FiniteTable(functions=[[[1.0], [1.0]], [[0.0], [1.0]]], atoms=[[0.0], [1.0]])
    assert check_realizable(table, two_state_chain) == 1

    missing = FiniteTable(functions=[[[1.0], [1.0]]], atoms=[[0.0], [1.0]])
    with pytest.raises(ValidationError):
        check_realizable(missing, two_state_chain)

    np.testing.assert_allclose(check_realizable(LinearBall(1.0, 1, 1), scalar_lds), [[0.5]])
    with pytest.raises(ValidationError):
        check_realizable(LinearBall(0.1, 1, 1), scalar_lds)
    with pytest.raises(ValidationError):
        check_realizable(LinearBall(1.0, 1, 1), two_state_chain)


# ---------------------------------------------------------------------------
# Покрытия
# ---------------------------------------------------------------------------

def test_ball_grid_trivial_and_capped():
    np.testing.assert_array_equal(ball_grid(3, 1.0, 2.0), np.zeros((1, 3)))
    assert ball_grid(6, 1.0, 0.01, cap=1000) is None


def test_ball_grid_points_inside_ball():
    points = ball_grid(2, 1.0, 0.2)
    assert np.linalg.norm(points, axis=1).max() <= 1.0 + 1e-9
    assert len(np.unique(points, axis=0)) == len(points)


def test_scalar_linear_cover():
    cert = cover_linear(B=1.0, B_X=1.0, epsilon=0.5, dx=1, dy=1)
    assert cert.log_cardinality == pytest.approx(math.log(5.0))
    assert 1 <= cert.realized_size <= 5

    family = LinearBall(B=1.0, dx=1, dy=1)
    probes = probe_members(family, 200, seed=4)
    states = np.linspace(-1.0, 1.0, 41).reshape(-1, 1)
    certified, worst = certify_cover(cert, family, probes, states)
    assert certified
    assert worst <= 0.5


def test_planar_linear_cover_certified():
    cert = cover_linear(B=1.0, B_X=1.0, epsilon=0.25, dx=2, dy=1)
    family = LinearBall(B=1.0, dx=2, dy=1)
    angles = np.linspace(0.0, 2 * math.pi, 64, endpoint=False)
    states = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    certified, _ = certify_cover(cert, family, probe_members(family, 100, seed=5), states)
    assert certified
    assert cert.realized_size <= math.exp(cert.log_cardinality)


def test_cover_over_cap_reports_bound_only():
    cert = cover_linear(B=1.0, B_X=1.0, epsilon=0.01, dx=3, dy=2, cap=1000)
    assert cert.elements is None
    assert cert.notes
    with pytest.raises(ValidationError):
        certify_cover(cert, LinearBall(1.0, 3, 2), [], np.zeros((1, 3)))
    assert cover_rows(cert) == (["index"], [])


def test_finite_cover_is_the_family():
    family = FiniteTable(functions=[[[1.0], [2.0]], [[3.0], [4.0]]], atoms=[[0.0], [1.0]])
    cert = cover_finite(family, 0.1)
    assert cert.realized_size == 2
    assert cert.log_cardinality == pytest.approx(math.log(2))
    assert certify_cover(cert, family, [0, 1], family.atoms) == (True, 0.0)


def _scripted_m_eps(beta, B, q, eps):
    target = abs(math.log(4.0 * B / (beta * eps))) / beta
    m = 1
    while m - (q / beta) * math.log(m) < target:
        m += 1
    return m


@settings(max_examples=20, deadline=None)
@given(
    beta=st.floats(0.2, 3.0),
    B=st.floats(0.5, 3.0),
    q=st.floats(0.0, 1.0),
    eps=st.floats(1e-4, 0.5),
)
def test_ellipsoid_m_eps_matches_scan(beta, B, q, eps):
    m = ellipsoid_m_eps(beta, B, q, eps)
    assert m == _scripted_m_eps(beta, B, q, eps)
    assert m - (q / beta) * math.log(m) >= abs(math.log(4.0 * B / (beta * eps))) / beta


def test_ellipsoid_m_eps_example():
    # |log(400)| = 5.99 -> m = 6 при q = 0
    assert ellipsoid_m_eps(1.0, 1.0, 0.0, 0.01) == 6


def test_ellipsoid_tail_and_constant():
    assert ellipsoid_tail_bound(2.0, 1.0, 0.5, 4) == pytest.approx(2.0 * 4 * math.exp(-2.0) / 0.5)
    assert ellipsoid_hyper_constant(2, 1.5, 1.0, 0.5) == pytest.approx(1.0 + 7.0 * 1.5 ** 3 * 2 ** 4.0)
    with pytest.raises(ValidationError):
        ellipsoid_hyper_constant(2, 0.5, 1.0, 0.5)


def test_ellipsoid_cover_with_explicit_truncation():
    spec = Ellipsoid(beta=1.0, B_basis=math.sqrt(2), q_growth=0.0, mu=[math.exp(-2.0)])
    cert = ellipsoid_cover(spec, 0.5, m=1)
    assert cert.elements.shape[1] == 1
    assert np.abs(cert.elements).max() <= math.exp(-1.0) + 1e-12
    assert cert.log_cardinality == pytest.approx(math.log(1.0 + 8.0 * math.sqrt(2) / 0.5))
    # хвост B e^{-β}/β = 0.52 > ε/4
    assert any("tail" in note for note in cert.notes)


def test_ellipsoid_evaluate_scalar_input():
    spec = Ellipsoid(beta=1.0, B_basis=math.sqrt(2), q_growth=0.0, mu=[math.exp(-2.0)])
    theta = np.array([0.1])
    assert evaluate(spec, theta, 0.0).shape == (1,)
    assert evaluate(spec, theta, np.array([0.0, 0.5])).shape == (2, 1)


def test_ellipsoid_envelope_dominates_basis():
    with pytest.raises(ValidationError):
        Ellipsoid(beta=1.0, B_basis=1.0, q_growth=0.0, mu=[math.exp(-2.0)])
    spec = family_from_dict({"kind": "ellipsoid", "beta": 1.0, "mu": [math.exp(-2.0)]})
    assert spec.B_basis == CosineBasis().bound
    assert spec.q_growth == 0.0
    x = np.linspace(0.0, 1.0, 101)
    assert np.abs(spec.basis(x, 6)).max() <= spec.B_basis + 1e-12


def test_scalar_ball_grid_has_two_centres():
    np.testing.assert_allclose(ball_grid(1, 1.0, 0.5), [[-0.5], [0.5]])


@settings(max_examples=30, deadline=None)
@given(
    dx=st.integers(1, 2),
    B=st.floats(0.5, 2.0),
    B_X=st.floats(0.5, 2.0),
    eps=st.floats(0.1, 2.0),
    factor=st.floats(1.0, 4.0),
    seed=st.integers(0, 2 ** 32),
)
def test_linear_cover_shrinks_with_resolution_and_stays_certified(dx, B, B_X, eps, factor, seed):
    fine = cover_linear(B, B_X, eps, dx, 1)
    coarse = cover_linear(B, B_X, eps * factor, dx, 1)
    assert fine.realized_size >= coarse.realized_size
    assert fine.log_cardinality >= coarse.log_cardinality

    family = LinearBall(B=B, dx=dx, dy=1)
    rng = make_rng(seed)
    members = [sample_member(family, rng) for _ in range(30)]
    directions = rng.standard_normal((40, dx))
    states = B_X * directions / np.linalg.norm(directions, axis=1, keepdims=True)
    for cert in (fine, coarse):
        certified, worst = certify_cover(cert, family, members, states)
        assert certified, worst
