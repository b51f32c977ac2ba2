"""
Замкнутые формулы: основная оценка риска, цепочечная оценка, время прогрева,
аналитические оценки ‖Γ_dep‖ и константы для LDS и GLM
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, linalg

from errors import NumericalError, ValidationError
from processes import (
    GlmSpec,
    controllability_gramian,
    glm_hyper_constant,
    glm_moment_bound,
    glm_state_bound,
    truncation_radius,
)


logger = logging.getLogger(__name__)

VARIABLE_PART = "variable part, up to universal constant"
EXP_LIMIT = 700.0
DEFAULT_CHAINING_GRID = 64


# ---------------------------------------------------------------------------
# Основная оценка
# ---------------------------------------------------------------------------

@dataclass
class BoundReport:
    """Слагаемые оценки 8·EM_T + r² + B²|F_r|exp(-T r^{4-2α}/(8C‖Γ‖²)) (+ хвост усечения)"""

    em_t: float
    r: float
    union_term: float
    total: float
    log_union: float
    tail_term: float = 0.0
    inputs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "em_t": self.em_t,
            "r": self.r,
            "union_term": self.union_term,
            "log_union": self.log_union,
            "tail_term": self.tail_term,
            "total": self.total,
            "inputs": dict(self.inputs),
        }


def _safe_exp(value: float) -> float:
    if value > EXP_LIMIT:
        logger.warning(f"Union term exp({value:.4g}) overflows, reporting inf")
        return math.inf
    return math.exp(value)


def main_bound(em_t: float, r: float, B: float, log_card: float, C: float, alpha: float,
               gamma_opnorm: float, T: int) -> BoundReport:
    """
    Оценка избыточного риска через мартингальную сложность и нижнюю изометрию

    Слагаемое объединения считается в логарифмах, чтобы |F_r| не переполнялось.
    """
    if not 1.0 <= alpha <= 2.0:
        raise ValidationError(f"alpha must lie in [1, 2], got {alpha}")
    if not 0.0 < r <= B * (1.0 + 1e-12):
        raise ValidationError(f"r must lie in (0, B], got r={r}, B={B}")
    if not C > 0.0:
        raise ValidationError(f"C must be positive, got {C}")

    log_union = (
        2.0 * math.log(B) + log_card
        - T * r ** (4.0 - 2.0 * alpha) / (8.0 * C * gamma_opnorm ** 2)
    )
    union = _safe_exp(log_union)
    return BoundReport(
        em_t=em_t,
        r=r,
        union_term=union,
        total=8.0 * em_t + r ** 2 + union,
        log_union=log_union,
        inputs={"B": B, "log_card": log_card, "C": C, "alpha": alpha,
                "gamma_opnorm": gamma_opnorm, "T": T},
    )


def lower_tail_bound(mean_g: float, alpha: float, C: float, gamma_opnorm: float, T: int) -> float:
    """
    Нижний хвост для одной функции с E(1/T)Σ‖f‖² = mean_g:
    exp(-T·mean_g^{2-α}/(8C‖Γ‖²))
    """
    if mean_g < 0.0:
        raise ValidationError(f"Second moment must be non-negative, got {mean_g}")
    return math.exp(-T * mean_g ** (2.0 - alpha) / (8.0 * C * gamma_opnorm ** 2))


# ---------------------------------------------------------------------------
# Цепочечная оценка
# ---------------------------------------------------------------------------

def chaining_bound(log_cover: Callable[[float], float], sigma_w: float, T: int, d_y: int,
                   B: float = 1.0, n_grid: int = DEFAULT_CHAINING_GRID) -> float:
    """
    inf_{γ>0, 0≤δ≤γ} σ²logN(γ)/T + σ√d_y·δ + (σ/√T)∫_δ^γ √logN(s) ds

    γ и δ пробегают общую логарифмическую сетку на [1e-6·B, B] (δ также 0).
    Возвращается минимум по сетке, т.е. оценка сверху на инфимум.
    """
    if not (sigma_w >= 0.0 and T >= 1 and B > 0.0):
        raise ValidationError(f"Need sigma_w >= 0, T >= 1, B > 0, got {sigma_w}, {T}, {B}")

    nodes = np.geomspace(1e-6 * B, B, n_grid)

    def root(s: float) -> float:
        return math.sqrt(max(log_cover(s), 0.0))

    # I[k] = ∫_0^{nodes[k]} √logN
    head = integrate.quad(root, 0.0, nodes[0], limit=200)[0]
    pieces = [integrate.quad(root, a, b, limit=200)[0] for a, b in zip(nodes[:-1], nodes[1:])]
    cumulative = head + np.concatenate([[0.0], np.cumsum(pieces)])
    log_n = np.array([max(log_cover(s), 0.0) for s in nodes])

    best = math.inf
    for g in range(n_grid):
        lead = sigma_w ** 2 * log_n[g] / T
        at_zero = lead + sigma_w / math.sqrt(T) * cumulative[g]
        deltas = nodes[: g + 1]
        inner = (
            lead
            + sigma_w * math.sqrt(d_y) * deltas
            + sigma_w / math.sqrt(T) * (cumulative[g] - cumulative[: g + 1])
        )
        best = min(best, at_zero, float(inner.min()))
    return best


# ---------------------------------------------------------------------------
# Время прогрева
# ---------------------------------------------------------------------------

@dataclass
class BurnInReport:
    """Нижняя граница на допустимый горизонт T"""

    value: float
    kind: str
    label: str = ""
    terms: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"value": self.value, "kind": self.kind, "label": self.label, "terms": dict(self.terms)}


def _root(base: float, power: float) -> float:
    return max(base, 0.0) ** power


def alpha1_terms(B: float, p: float, q: float, gamma_opnorm: float, T: int) -> dict:
    """
    Слагаемые оценки для ограниченного класса (α = 1)

    c = (1/√8)(16B²p‖Γ‖²)^{1/q}, r = cT^{-1/(2+q)}; второе слагаемое
    (1/√8)(16B²p‖Γ‖²)^{2/q}T^{-2/(2+q)}, третье exp(-T^{q/(2+q)}/(16B²‖Γ‖²)).
    balance_c решает p(√8/c)^q = 1/(16B²‖Γ‖²).
    """
    if not 0.0 < q < 2.0:
        raise ValidationError(f"q must lie in (0, 2), got {q}")
    scale = 16.0 * B ** 2 * p * gamma_opnorm ** 2
    c = scale ** (1.0 / q) / math.sqrt(8.0)
    r = c * T ** (-1.0 / (2.0 + q))
    return {
        "c": c,
        "r": r,
        "r_sq": r ** 2,
        "second": scale ** (2.0 / q) / math.sqrt(8.0) * T ** (-2.0 / (2.0 + q)),
        "third": math.exp(-T ** (q / (2.0 + q)) / (16.0 * B ** 2 * gamma_opnorm ** 2)),
        "balance_c": math.sqrt(8.0) * scale ** (1.0 / q),
    }


def burn_in(kind: str, params: dict) -> BurnInReport:
    """
    Формулы времени прогрева

    Args:
        kind: nonparametric | parametric | lds | glm | alpha1
        params: параметры соответствующей формулы
    """
    if kind == "nonparametric":
        p, q, gamma = params["p"], params["q"], params["gamma"]
        C, g2, B = params["C"], params["gamma_opnorm"] ** 2, params["B"]
        inner = (q / 2.0) * (2.0 / (2.0 + q) + gamma)
        if not 0.0 < inner < 1.0:
            raise ValidationError(f"Exponent (q/2)(2/(2+q)+gamma)={inner:.6g} must lie in (0, 1)")
        t1 = _root(8.0 * (32.0 * p + 1.0) * C * g2, 1.0 / (1.0 - inner))
        t2 = _root(math.log(B) + (4.0 / q) * math.log(8.0 / q), 1.0 / inner)
        return BurnInReport(value=max(t1, t2), kind=kind, terms={"T1": t1, "T2": t2})

    elif kind == "parametric":
        p, q = params["p"], params["q"]
        b1, b2 = params.get("b1", 0.0), params.get("b2", 0.0)
        gamma, alpha, B = params.get("gamma", 0.0), params["alpha"], params.get("B", 1.0)
        psi = 1.0 - b1 - (1.0 + gamma) * (4.0 - 2.0 * alpha + b2) / 2.0
        if psi <= 0.0:
            raise ValidationError(f"growth conditions unsatisfiable: psi={psi:.6g} <= 0")
        lead = (128.0 * p) ** (1.0 / psi)
        t1 = max(
            lead * math.log(8.0) ** (q / psi),
            lead * _root((4.0 * q / psi) * math.log((128.0 * p) ** (1.0 / q) * 8.0 * q / psi), q / psi),
        )
        t2 = max(
            _root(512.0 * math.log(B), 1.0 / psi),
            _root((1024.0 / psi) * math.log(2056.0 / psi), 1.0 / psi),
        )
        return BurnInReport(value=max(t1, t2), kind=kind, terms={"psi": psi, "T1": t1, "T2": t2})

    elif kind == "lds":
        tau, h, d = params["tau"], params["H_opnorm"], params["dx"]
        rho, mu, kappa = params["rho"], params["mu"], params["kappa"]
        _check_rate(rho)
        value = (
            tau ** 4 * h ** 4 * d ** 2 / ((1.0 - rho) ** 2 * mu ** 2)
            * max(kappa ** 2, 1.0 / (1.0 - rho) ** 2)
        )
        return BurnInReport(value=value, kind=kind, label=VARIABLE_PART)

    elif kind == "glm":
        P, cond, d = params["P_opnorm"], params["cond_H"], params["dx"]
        zeta, rho = params["zeta"], params["rho"]
        _check_rate(rho)
        value = P ** 2 * cond ** 4 * d ** 4 / (zeta ** 4 * (1.0 - rho) ** 6)
        return BurnInReport(value=value, kind=kind, label=VARIABLE_PART)

    elif kind == "alpha1":
        terms = alpha1_terms(params["B"], params["p"], params["q"], params["gamma_opnorm"],
                             params.get("T", 1))
        scale = 16.0 * params["B"] ** 2 * params["p"] * params["gamma_opnorm"] ** 2
        terms["second_coefficient"] = scale ** (2.0 / params["q"]) / math.sqrt(8.0)
        terms["third_denominator"] = 16.0 * params["B"] ** 2 * params["gamma_opnorm"] ** 2
        return BurnInReport(value=terms["second_coefficient"], kind=kind, terms=terms)

    else:
        raise ValidationError(f"Unknown burn-in kind: {kind}")


def _check_rate(rho: float):
    if not 0.0 < rho < 1.0:
        raise ValidationError(f"rho must lie in (0, 1), got {rho}")


# ---------------------------------------------------------------------------
# Аналитические оценки зависимости
# ---------------------------------------------------------------------------

def dependency_bound_lds(tau: float, rho: float, kappa: int, H_opnorm: float, mu: float,
                         B_Xbar: float, dx: int) -> float:
    """5κ + 22/(1-ρ)·max(log((τ²/4μ)[B_X̄² + d‖H‖²/(1-ρ)]), 0)"""
    _check_rate(rho)
    if not mu > 0.0:
        raise ValidationError(f"mu must be positive, got {mu}")
    arg = tau ** 2 / (4.0 * mu) * (B_Xbar ** 2 + dx * H_opnorm ** 2 / (1.0 - rho))
    return 5.0 * kappa + 22.0 / (1.0 - rho) * max(math.log(arg), 0.0)


def dependency_bound_glm(B: float, dx: int, B_Xbar: float, B_X: float, sigma_min_H: float,
                         rho: float) -> float:
    """22/(1-ρ)·max(log(B√d(B_X̄+B_X)/(2σ_min(H))), 0)"""
    _check_rate(rho)
    if sigma_min_H <= 0.0:
        raise ValidationError("sigma_min(H) = 0: noise covariance is degenerate")
    if B < 1.0:
        raise ValidationError(f"B must be >= 1, got {B}")
    arg = B * math.sqrt(dx) * (B_Xbar + B_X) / (2.0 * sigma_min_H)
    return 22.0 / (1.0 - rho) * max(math.log(arg), 0.0)


# ---------------------------------------------------------------------------
# Сборка оценок для LDS и GLM
# ---------------------------------------------------------------------------

def lds_constants(A, H, rho: float, tau: float, kappa: int, T: int, B: float,
                  beta: float = 4.0) -> dict:
    """μ, R, B_X̄, C_LDS, оценка ‖Γ_dep‖ и хвост усечения для усечённой LDS"""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    dx, dv = A.shape[0], H.shape[1]
    mu = float(linalg.eigvalsh(controllability_gramian(A, H, kappa - 1)).min())
    if mu <= 0.0:
        raise NumericalError(f"Pair (A, H) is not {kappa}-step controllable (lambda_min={mu:.3g})")

    h = float(linalg.norm(H, 2))
    radius = truncation_radius(dv, T, beta)
    b_bar = h * tau * radius / (1.0 - rho)
    return {
        "mu": mu,
        "R": radius,
        "B_Xbar": b_bar,
        "C": 108.0 * tau ** 4 * h ** 4 / ((1.0 - rho) ** 2 * mu ** 2),
        "gamma_bound": dependency_bound_lds(tau, rho, kappa, h, mu, b_bar, dx),
        "tail": 4.0 * math.sqrt(3.0) * B ** 2 * h ** 2 * tau ** 2 * dx / ((1.0 - rho) * T ** (beta / 2.0)),
        "dx": dx,
    }


def glm_constants(spec: GlmSpec, T: int, B: float, beta: float = 4.0) -> dict:
    """B_X, R, B_X̄, C_GLM, оценка ‖Γ_dep‖ и хвост усечения для усечённой GLM-динамики"""
    radius = truncation_radius(spec.dv, T, beta)
    b_x = glm_moment_bound(spec)
    b_bar = glm_state_bound(spec, radius)
    sigma_min = float(linalg.svdvals(spec.H).min())
    return {
        "R": radius,
        "B_X": b_x,
        "B_Xbar": b_bar,
        "C": glm_hyper_constant(spec, radius),
        "gamma_bound": dependency_bound_glm(max(B, 1.0), spec.dx, b_bar, b_x, sigma_min, spec.rho),
        "tail": 4.0 * B ** 2 * b_x ** 2 / T ** (beta / 2.0),
        "dx": spec.dx,
    }


def glm_log_cover(B: float, B_Xbar: float, dx: int, epsilon: float) -> float:
    """log N ≤ d² log(1 + 4B·B_X̄/ε)"""
    return dx ** 2 * math.log(1.0 + 4.0 * B * B_Xbar / epsilon)


def truncated_risk_bound(em_t: float, r: float, B: float, constants: dict, T: int) -> BoundReport:
    """
    8·EM_T + r² + 4B²B_X̄²(1 + 4√8·B·B_X̄/r)^{d²} exp(-T/(8C‖Γ‖²)) + хвост

    Центрированный класс ограничен 2B·B_X̄, показатель α = 2.
    """
    b_bar = constants["B_Xbar"]
    log_card = glm_log_cover(B, b_bar, constants["dx"], r / math.sqrt(8.0))
    report = main_bound(em_t, r, 2.0 * B * b_bar, log_card, constants["C"], 2.0,
                        constants["gamma_bound"], T)
    report.tail_term = constants["tail"]
    report.total += report.tail_term
    return report


def wasserstein_tv_bound(lipschitz: float, H, w1: float) -> float:
    """TV ≤ L·√tr((HHᵀ)^{-1})/2 · W₁ для законов, сглаженных гауссовым шумом H·V"""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    cov = H @ H.T
    if float(linalg.eigvalsh(cov).min()) <= 0.0:
        raise ValidationError("HH^T must be invertible")
    return lipschitz * math.sqrt(float(np.trace(linalg.inv(cov)))) / 2.0 * w1
