"""
Монте-Карло проверки концентрационного аппарата: неравенство Самсона,
нижняя изометрия, свойства усечённого шума, перенос со стационарности
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, asdict, field

import numpy as np
from scipy import stats

from diagnostics import dependency_matrix_finite, dependency_opnorm, exact_moments, hyper_ratio
from errors import ValidationError
from processes import (
    FiniteChainSpec,
    ProcessSpec,
    coupling_radius,
    propagated_marginals,
    simulate,
    simulate_chain_paths,
    stationary_distribution,
    with_truncation,
)
from utils import derive_seed, make_rng, standard_error


logger = logging.getLogger(__name__)

MC_SIGMAS = 3.0
NORM_TOL = 1e-9
MGF_LAMBDAS = (0.25, 0.5, 1.0, 2.0)
MGF_DIRECTIONS = 8


# ---------------------------------------------------------------------------
# Неравенство Самсона
# ---------------------------------------------------------------------------

@dataclass
class SamsonRow:
    lam: float
    lhs_mc: float
    lhs_se: float
    lhs_exact: float
    rhs: float
    violated: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _check_table(spec: FiniteChainSpec, g) -> np.ndarray:
    g = np.asarray(g, dtype=float).reshape(-1)
    if g.shape != (spec.n_states,):
        raise ValidationError(f"Function table must have {spec.n_states} entries, got {g.shape}")
    if np.any(g < 0.0):
        raise ValidationError("Function g must be non-negative on every atom")
    return g


def samson_check(spec: FiniteChainSpec, g, T: int, lambda_grid, n_mc: int,
                 seed: int) -> list[SamsonRow]:
    """
    E exp(-λΣg(X_t)) против exp(-λΣEg + λ²‖Γ‖²ΣEg²/2) на сетке λ

    Левая часть: среднее по n_mc путям и точное значение μ₀D(PD)^{T-1}1
    с D = diag(e^{-λg}); нарушение: превышение правой части более чем на 3 se.
    """
    g = _check_table(spec, g)
    marginals = propagated_marginals(spec, T)
    mean_sum = float(np.sum(marginals @ g))
    sq_sum = float(np.sum(marginals @ g ** 2))
    gamma = dependency_opnorm(dependency_matrix_finite(spec, T))

    paths = simulate_chain_paths(spec, T, n_mc, make_rng(seed))
    sums = g[paths].sum(axis=1)

    rows = []
    for lam in lambda_grid:
        lam = float(lam)
        samples = np.exp(-lam * sums)
        lhs, se = float(samples.mean()), standard_error(samples)

        weights = np.exp(-lam * g)
        vec = spec.init_probs * weights
        for _ in range(T - 1):
            vec = (vec @ spec.transition) * weights
        exact = float(vec.sum())

        rhs = math.exp(-lam * mean_sum + lam ** 2 * gamma ** 2 * sq_sum / 2.0)
        violated = lhs > rhs + MC_SIGMAS * se
        if violated:
            logger.warning(f"Samson check violated at lambda={lam}: {lhs:.6g} > {rhs:.6g} + 3se")
        rows.append(SamsonRow(lam=lam, lhs_mc=lhs, lhs_se=se, lhs_exact=exact, rhs=rhs, violated=violated))
    return rows


# ---------------------------------------------------------------------------
# Нижняя изометрия
# ---------------------------------------------------------------------------

@dataclass
class LowerIsometryReport:
    """
    Частоты событий малой эмпирической нормы на сети и теоретическая оценка

    p_half: хотя бы одна f с эмпирической нормой ≤ ½ истинной (её и
    контролирует оценка); p_eighth_any: то же для 1/8; p_sup: супремум
    (1/T)Σ‖f‖² - (1/8T)ΣE‖f‖² по сети не больше нуля.
    """

    p_half: float
    se_half: float
    p_eighth_any: float
    p_sup: float
    bound: float
    vacuous: bool
    violated: bool
    gamma_opnorm: float
    n_mc: int
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def lower_isometry_check(spec: FiniteChainSpec, net: list, r: float, alpha: float, C: float,
                         T: int, n_mc: int, seed: int) -> LowerIsometryReport:
    """
    Проверка нижней изометрии на конечной сети центрированных функций

    Args:
        spec: цепь
        net: таблицы значений на атомах, каждая с нормой r в L²
        r: радиус сферы
        alpha, C: показатель и константа гиперконтрактивности сети
        T: горизонт
        n_mc: число путей
        seed: сид
    """
    tables = [np.asarray(f, dtype=float).reshape(spec.n_states, -1) for f in net]
    if not tables:
        raise ValidationError("Net must contain at least one function")

    for idx, table in enumerate(tables):
        second, fourth = exact_moments(spec, table, T)
        if abs(math.sqrt(second) - r) > NORM_TOL:
            raise ValidationError(f"Net member {idx} has L2 norm {math.sqrt(second):.12g}, expected r={r}")
        if hyper_ratio(second, fourth, alpha) > C * (1.0 + NORM_TOL):
            raise ValidationError(f"Net member {idx} violates ({C}, {alpha})-hypercontractivity")

    gamma = dependency_opnorm(dependency_matrix_finite(spec, T))
    bound = len(tables) * math.exp(-T * r ** (4.0 - 2.0 * alpha) / (8.0 * C * gamma ** 2))

    paths = simulate_chain_paths(spec, T, n_mc, make_rng(seed))
    empirical = np.stack([np.sum(t ** 2, axis=1)[paths].mean(axis=1) for t in tables])  # (|net|, n_mc)
    target = r ** 2

    half = np.any(empirical <= 0.5 * target, axis=0).astype(float)
    eighth_any = np.any(empirical <= target / 8.0, axis=0)
    sup_event = np.all(empirical - target / 8.0 <= 0.0, axis=0)

    p_half, se_half = float(half.mean()), standard_error(half)
    report = LowerIsometryReport(
        p_half=p_half,
        se_half=se_half,
        p_eighth_any=float(eighth_any.mean()),
        p_sup=float(sup_event.mean()),
        bound=bound,
        vacuous=bound > 1.0,
        violated=p_half > bound + MC_SIGMAS * se_half,
        gamma_opnorm=gamma,
        n_mc=n_mc,
    )
    if report.vacuous:
        report.notes.append("bound exceeds 1 (vacuous)")
    if report.violated:
        logger.warning(f"Lower isometry violated: {p_half:.4g} > {bound:.4g} + 3se")
    return report


# ---------------------------------------------------------------------------
# Усечённый шум
# ---------------------------------------------------------------------------

def truncated_noise_diag(d: int, R: float, n_mc: int, seed: int) -> dict:
    """
    Свойства W̄ = W·1{‖W‖ ≤ R}, W ~ N(0, I_d)

    Среднее и его se, спектр ковариации, отношение E exp(λ⟨u,W̄⟩)/exp(2λ²)
    на сетке (λ, u), сравнение четвёртых моментов квадратичных форм
    и точные P(‖W‖ > R), E[W̄₁²].
    """
    if not R > 0.0:
        raise ValidationError(f"R must be positive, got {R}")
    rng = make_rng(seed)
    raw = rng.standard_normal((n_mc, d))
    keep = np.linalg.norm(raw, axis=1) <= R
    trunc = raw * keep[:, None]

    mean = trunc.mean(axis=0)
    mean_se = trunc.std(axis=0, ddof=1) / math.sqrt(n_mc)
    cov_eigs = np.linalg.eigvalsh(trunc.T @ trunc / n_mc)

    directions = rng.standard_normal((MGF_DIRECTIONS, d))
    directions = np.vstack([np.eye(d), directions / np.linalg.norm(directions, axis=1, keepdims=True)])
    mgf_ratio, mgf_se = 0.0, 0.0
    for lam in MGF_LAMBDAS:
        for u in directions:
            samples = np.exp(lam * (trunc @ u) - 2.0 * lam ** 2)
            value = float(samples.mean())
            if value > mgf_ratio:
                mgf_ratio, mgf_se = value, standard_error(samples)

    root = rng.standard_normal((d, d))
    M = root @ root.T
    quad_trunc = np.einsum("ni,ij,nj->n", trunc, M, trunc) ** 2
    quad_raw = np.einsum("ni,ij,nj->n", raw, M, raw) ** 2
    trace_sq = float(np.trace(M)) ** 2

    report = {
        "d": d,
        "R": R,
        "n_mc": n_mc,
        "mean": mean.tolist(),
        "mean_se": mean_se.tolist(),
        "cov_eig_min": float(cov_eigs.min()),
        "cov_eig_max": float(cov_eigs.max()),
        "mgf_ratio_max": mgf_ratio,
        "mgf_ratio_se": mgf_se,
        "quad_trunc_mean": float(quad_trunc.mean()),
        "quad_trunc_se": standard_error(quad_trunc),
        "quad_raw_mean": float(quad_raw.mean()),
        "quad_raw_se": standard_error(quad_raw),
        "quad_pointwise_ok": bool(np.all(quad_trunc <= quad_raw)),
        "three_trace_sq": 3.0 * trace_sq,
        "trunc_prob_exact": float(stats.chi2.sf(R ** 2, d)),
        "second_moment_exact": float(stats.chi2.cdf(R ** 2, d + 2)),
        "second_moment_mc": float(np.mean(trunc[:, 0] ** 2)),
    }
    if d == 1:
        report["second_moment_closed_form"] = float(
            1.0 - 2.0 * (R * stats.norm.pdf(R) + stats.norm.sf(R))
        )
    return report


def coupling_check(spec: ProcessSpec, T: int, delta: float, n_rep: int, seed: int) -> dict:
    """Доля реплик, где усечение при R = √d + √(2 log(T/δ)) изменило траекторию (ожидается ≤ δ)"""
    radius = coupling_radius(spec.dv, T, delta)
    truncated = with_truncation(spec, radius)
    flags = np.array([
        simulate(truncated, T, derive_seed(seed, i)).truncated_flag for i in range(n_rep)
    ], dtype=float)
    frac, se = float(flags.mean()), standard_error(flags)
    return {
        "R": radius,
        "delta": delta,
        "fraction": frac,
        "se": se,
        "holds": frac <= delta + MC_SIGMAS * se,
    }


# ---------------------------------------------------------------------------
# Перенос со стационарного распределения
# ---------------------------------------------------------------------------

def _rescale(spec: FiniteChainSpec, table: np.ndarray, r: float, T: int) -> np.ndarray:
    second, _ = exact_moments(spec, table, T)
    if second <= 0.0:
        return table
    return table * (r / math.sqrt(second))


def stationary_transfer_check(spec: FiniteChainSpec, sample: list, r: float, T: int) -> dict:
    """
    Константа гиперконтрактивности через сравнение со стационарностью

    C_χ² = max_t χ²(μ_t, π), C_TV = (1/T)Σ_t TV(μ_t, π) / r², C_{8→2} =
    max_f E_π‖f‖⁸ / (E_π‖f‖²)⁴; перенесённая константа
    (1 + √C_χ²)·√C_{8→2}·(1 + C_TV·B²)² сравнивается с прямой при α = 2.
    """
    pi = stationary_distribution(spec.transition)
    marginals = propagated_marginals(spec, T)
    support = pi > 1e-15
    if np.any(marginals[:, ~support] > 0.0):
        raise ValidationError("Marginals are not absolutely continuous w.r.t. the stationary distribution")

    chi_sq = np.sum((marginals[:, support] - pi[support]) ** 2 / pi[support], axis=1)
    tv = 0.5 * np.abs(marginals - pi).sum(axis=1)
    c_chi = float(chi_sq.max())
    c_tv = float(tv.mean() / r ** 2)

    tables = [_rescale(spec, np.asarray(f, dtype=float).reshape(spec.n_states, -1), r, T) for f in sample]
    c_82, c_direct, sup_norm = 1.0, 1.0, 0.0
    for table in tables:
        sq = np.sum(table ** 2, axis=1)
        second_pi = float(pi @ sq)
        if second_pi > 0.0:
            c_82 = max(c_82, float(pi @ sq ** 4) / second_pi ** 4)
        second, fourth = exact_moments(spec, table, T)
        c_direct = max(c_direct, hyper_ratio(second, fourth, 2.0))
        sup_norm = max(sup_norm, float(np.sqrt(sq.max())))

    c_transferred = (1.0 + math.sqrt(c_chi)) * math.sqrt(c_82) * (1.0 + c_tv * sup_norm ** 2) ** 2
    holds = c_direct <= c_transferred * (1.0 + 1e-9)
    if not holds:
        logger.error(f"Transferred constant {c_transferred:.6g} below direct estimate {c_direct:.6g}")
    return {
        "chi_sq": chi_sq.tolist(),
        "tv": tv.tolist(),
        "C_chi_sq": c_chi,
        "C_tv": c_tv,
        "C_8_2": c_82,
        "B": sup_norm,
        "C_direct": c_direct,
        "C_transferred": c_transferred,
        "holds": holds,
    }


def moment_equivalence_check(spec: FiniteChainSpec, table, T: int, eps: float) -> dict:
    """
    Ограниченная функция с ‖f‖_{L^{2+ε}} = c‖f‖_{L²} удовлетворяет
    отношению гиперконтрактивности при α = 1+ε/2 не больше B^{2-ε}c^{2+ε}
    """
    if not 0.0 < eps <= 2.0:
        raise ValidationError(f"eps must lie in (0, 2], got {eps}")
    table = np.asarray(table, dtype=float).reshape(spec.n_states, -1)
    norms = np.sqrt(np.sum(table ** 2, axis=1))
    weights = propagated_marginals(spec, T).mean(axis=0)

    second = float(weights @ norms ** 2)
    higher = float(weights @ norms ** (2.0 + eps))
    fourth = float(weights @ norms ** 4)
    if second <= 0.0:
        return {"ratio": 1.0, "bound": 1.0, "c": 1.0, "B": 0.0, "holds": True}

    c = higher ** (1.0 / (2.0 + eps)) / math.sqrt(second)
    B = float(norms.max())
    ratio = hyper_ratio(second, fourth, 1.0 + eps / 2.0)
    bound = B ** (2.0 - eps) * c ** (2.0 + eps)
    return {"ratio": ratio, "bound": bound, "c": c, "B": B, "holds": ratio <= bound * (1.0 + 1e-9)}
