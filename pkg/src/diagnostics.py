"""
Диагностика зависимости и сложности: матрица зависимости Γ_dep,
гиперконтрактивность по траектории, мартингальная сложность со сдвигом
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from errors import ValidationError
from estimators import OptimizerOpts, erm_glm
from hypotheses import CoverCertificate, FiniteTable, HypothesisSpec, evaluate, sample_member
from processes import (
    FiniteChainSpec,
    LinkFn,
    ProcessSpec,
    TrajectoryBatch,
    propagated_marginals,
    simulate_ensemble,
)
from utils import derive_seed, make_rng


logger = logging.getLogger(__name__)

DEFAULT_DEPENDENCY_CAP = 2048
DEFAULT_BRUTE_FORCE_CAP = 2 ** 20
MASS_TOL = 1e-14
EIGEN_RTOL = 1e-10
HYPER_SCALES = (0.5, 1.0, 2.0)
MC_CHUNK = 64

# f(xs) -> значения, xs формы (n, d_x)
MemberFn = Callable[[np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# Матрица зависимости
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DependencyMatrix:
    """Верхнетреугольная матрица Γ_dep с единичной диагональю"""

    coeffs: np.ndarray
    provenance: str

    @property
    def T(self) -> int:
        return self.coeffs.shape[0]

    def lag_profile(self) -> np.ndarray:
        """max_i Γ_{i,i+k} по лагам k = 0..T-1"""
        return np.array([np.diagonal(self.coeffs, k).max() for k in range(self.T)])

    def to_dict(self) -> dict:
        return {"T": self.T, "provenance": self.provenance, "coeffs": self.coeffs.tolist()}


def dependency_matrix_finite(spec: FiniteChainSpec, T: int,
                             cap: int = DEFAULT_DEPENDENCY_CAP) -> DependencyMatrix:
    """
    Точная Γ_dep конечной цепи

    Γ_ij = √(2·max_{s: μ_i(s)>0} TV(P^{j-i}[s], μ_j)), μ_j: безусловный маргинал.
    """
    if T < 1:
        raise ValidationError(f"T must be a positive integer, got {T}")
    if T > cap:
        raise ValidationError(f"T={T} exceeds dependency matrix cap {cap}")

    marginals = propagated_marginals(spec, T)
    coeffs = np.eye(T)
    power = np.eye(spec.n_states)
    for k in range(1, T):
        power = power @ spec.transition
        i = np.arange(T - k)
        tv = 0.5 * np.abs(power[:, None, :] - marginals[None, i + k, :]).sum(axis=2)
        tv = np.where(marginals[i].T > MASS_TOL, tv, 0.0).max(axis=0)
        coeffs[i, i + k] = np.sqrt(2.0 * tv)

    logger.debug(f"Dependency matrix for T={T} computed on {spec.n_states} states")
    return DependencyMatrix(coeffs=coeffs, provenance="exact_finite_chain")


def joint_law(spec: FiniteChainSpec, T: int, cap: int = DEFAULT_BRUTE_FORCE_CAP) -> np.ndarray:
    """Совместный закон (Z_0..Z_{T-1}) как тензор формы (K,)*T"""
    K = spec.n_states
    if T * math.log(K) > math.log(cap) + 1e-12:
        raise ValidationError(f"K^T = {K}^{T} exceeds brute-force cap {cap}")
    joint = np.array(spec.init_probs)
    for _ in range(1, T):
        joint = joint[..., None] * spec.transition
    return joint


def dependency_matrix_bruteforce(spec: FiniteChainSpec, T: int,
                                 cap: int = DEFAULT_BRUTE_FORCE_CAP) -> DependencyMatrix:
    """
    Γ_dep перебором: условие на каждый путь прошлого Z_{0:i} положительной
    массы, сравнение с законом будущего Z_{j:T-1}
    """
    K = spec.n_states
    joint = joint_law(spec, T, cap)
    coeffs = np.eye(T)
    for i in range(T - 1):
        for j in range(i + 1, T):
            pair = joint.sum(axis=tuple(range(i + 1, j))) if j > i + 1 else joint
            table = pair.reshape(K ** (i + 1), K ** (T - j))
            mass = table.sum(axis=1)
            future = table.sum(axis=0)
            keep = mass > MASS_TOL
            cond = table[keep] / mass[keep, None]
            tv = 0.5 * np.abs(cond - future[None]).sum(axis=1).max()
            coeffs[i, j] = math.sqrt(2.0 * tv)
    return DependencyMatrix(coeffs=coeffs, provenance="exact_finite_chain")


def dependency_opnorm(G: DependencyMatrix) -> float:
    """‖Γ_dep‖: наибольшее сингулярное число"""
    return float(linalg.svdvals(G.coeffs)[0])


def toeplitz_opnorm_bound(coeffs) -> float:
    """Оценка нормы верхнетреугольной тёплицевой матрицы: Σ|a_k|"""
    return float(np.sum(np.abs(np.asarray(coeffs, dtype=float))))


def dependency_row_bound(G: DependencyMatrix) -> float:
    """1 + Σ_k max_i Γ_{i,i+k}"""
    return float(G.lag_profile().sum())


def dependency_rows(G: DependencyMatrix) -> tuple[list[str], list[list]]:
    """CSV коэффициентов: i, j, lag, gamma для i ≤ j"""
    i, j = np.triu_indices(G.T)
    rows = [[int(a), int(b), int(b - a), float(G.coeffs[a, b])] for a, b in zip(i, j)]
    return ["i", "j", "lag", "gamma"], rows


# ---------------------------------------------------------------------------
# Гиперконтрактивность
# ---------------------------------------------------------------------------

@dataclass
class HyperEstimate:
    """Оценка константы (C, α)-гиперконтрактивности по траектории"""

    C_hat: float
    alpha: float
    alpha_fit: float
    n_mc: int
    n_funcs: int
    descriptor: str
    exact: bool = False
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "C_hat": self.C_hat,
            "alpha": self.alpha,
            "alpha_fit": self.alpha_fit,
            "n_mc": self.n_mc,
            "n_funcs": self.n_funcs,
            "descriptor": self.descriptor,
            "exact": self.exact,
            "notes": list(self.notes),
        }


def hyper_ratio(second: float, fourth: float, alpha: float) -> float:
    """fourth / second^α с соглашением 0/0 = 1"""
    if second <= 0.0:
        return 1.0
    return fourth / second ** alpha


def exact_moments(spec: FiniteChainSpec, values: np.ndarray, T: int) -> tuple[float, float]:
    """
    Точные траекторные моменты функции на атомах

    Returns:
        (E(1/T)Σ‖f(X_t)‖², E(1/T)Σ‖f(X_t)‖⁴)
    """
    values = np.asarray(values, dtype=float).reshape(spec.n_states, -1)
    sq = np.sum(values ** 2, axis=1)
    weights = propagated_marginals(spec, T).mean(axis=0)
    return float(weights @ sq), float(weights @ sq ** 2)


def _mc_moments(process: ProcessSpec, members: list[MemberFn], T: int, n_mc: int,
                seed: int) -> np.ndarray:
    seeds = [derive_seed(seed, i) for i in range(n_mc)]
    sums = np.zeros((len(members), 2))
    for lo in range(0, n_mc, MC_CHUNK):
        xs, _ = simulate_ensemble(process, T, seeds[lo:lo + MC_CHUNK])
        flat = xs.reshape(-1, xs.shape[-1])
        for i, member in enumerate(members):
            sq = np.sum(np.asarray(member(flat)).reshape(len(flat), -1) ** 2, axis=1)
            sums[i] += (sq.sum(), (sq ** 2).sum())
    return sums / (n_mc * T)


def hyper_estimate(process: ProcessSpec, family_probe: Callable[[np.random.Generator], MemberFn],
                   T: int, n_mc: int, n_funcs: int, alpha: float, seed: int,
                   descriptor: str = "") -> HyperEstimate:
    """
    Оценка C = max_f E[(1/T)Σ‖f‖⁴] / (E[(1/T)Σ‖f‖²])^α по выборке членов

    Для конечных цепей моменты точные (маргиналы), максимум дополнительно
    берётся по индикаторам состояний. α_fit: наклон log(четвёртого) от
    log(второго) момента по членам и масштабам 0.5, 1, 2.

    Args:
        process: процесс ковариат
        family_probe: rng -> функция xs -> значения
        T: горизонт
        n_mc: число траекторий Монте-Карло (не меньше 100)
        n_funcs: число членов
        alpha: показатель
        seed: сид
    """
    if not 1.0 <= alpha <= 2.0:
        raise ValidationError(f"alpha must lie in [1, 2], got {alpha}")
    rng = make_rng(seed)
    members = [family_probe(rng) for _ in range(n_funcs)]

    exact = process.kind == "finite_chain"
    if exact:
        moments = np.array([exact_moments(process, f(process.atoms), T) for f in members]).reshape(-1, 2)
    else:
        if n_mc < 100:
            raise ValidationError(f"n_mc must be at least 100, got {n_mc}")
        moments = _mc_moments(process, members, T, n_mc, derive_seed(seed, 1))

    ratios = [hyper_ratio(s, f, alpha) for s, f in moments]
    notes = []
    skipped = int(np.sum(moments[:, 0] <= 0.0))
    if skipped:
        notes.append(f"{skipped} members with zero second moment counted as ratio 1")

    if exact:
        weights = propagated_marginals(process, T).mean(axis=0)
        ratios.extend(hyper_ratio(w, w, alpha) for w in weights)
    else:
        notes.append("Monte Carlo estimate over sampled members: lower bound on the family constant")

    points = [
        (math.log(c ** 2 * s), math.log(c ** 4 * f))
        for s, f in moments if s > 0.0 and f > 0.0
        for c in HYPER_SCALES
    ]
    alpha_fit = float("nan")
    if len({round(p[0], 12) for p in points}) >= 2:
        xs, ys = np.array(points).T
        alpha_fit = float(np.polyfit(xs, ys, 1)[0])

    return HyperEstimate(
        C_hat=float(max(ratios)) if ratios else 1.0,
        alpha=alpha,
        alpha_fit=alpha_fit,
        n_mc=0 if exact else n_mc,
        n_funcs=n_funcs,
        descriptor=descriptor or process.kind,
        exact=exact,
        notes=notes,
    )


def table_probe(spec: FiniteChainSpec, dy: int = 1,
                scale: float = 1.0) -> Callable[[np.random.Generator], MemberFn]:
    """Сэмплер случайных табличных функций на атомах цепи"""
    def probe(rng: np.random.Generator) -> MemberFn:
        table = FiniteTable(functions=scale * rng.standard_normal((1, spec.n_states, dy)), atoms=spec.atoms)
        return lambda xs: evaluate(table, 0, xs)
    return probe


def centered_probe(family: HypothesisSpec, truth) -> Callable[[np.random.Generator], MemberFn]:
    """Сэмплер членов центрированного семейства F⋆ = F - f⋆"""
    def probe(rng: np.random.Generator) -> MemberFn:
        member = sample_member(family, rng)
        return lambda xs: evaluate(family, member, xs) - evaluate(family, truth, xs)
    return probe


# ---------------------------------------------------------------------------
# Мартингальная сложность
# ---------------------------------------------------------------------------

def _offset_value(noise: np.ndarray, values: np.ndarray) -> float:
    """(1/T) Σ [4⟨W_t, g(X_t)⟩ - ‖g(X_t)‖²]"""
    return float(np.mean(4.0 * np.sum(noise * values, axis=1) - np.sum(values ** 2, axis=1)))


def martingale_complexity_linear(batch: TrajectoryBatch) -> float:
    """
    (4/T)‖(Σ X_tX_tᵀ)^{†/2} Σ X_t W_tᵀ‖_F²: супремум по всем матрицам
    """
    xs, noise = batch.xs, batch.noise
    gram = xs.T @ xs
    evals, evecs = linalg.eigh(gram)
    top = evals.max() if evals.size else 0.0
    inv_sqrt = np.where(evals > EIGEN_RTOL * top, 1.0 / np.sqrt(np.maximum(evals, 1e-300)), 0.0)
    root = (evecs * inv_sqrt) @ evecs.T
    cross = xs.T @ noise
    return float(4.0 / batch.T * np.sum((root @ cross) ** 2))


def martingale_complexity_general(batch: TrajectoryBatch, family: HypothesisSpec, truth=None,
                                  cover: Optional[CoverCertificate] = None,
                                  opts: Optional[OptimizerOpts] = None) -> float:
    """
    sup_{g ∈ F⋆} (1/T) Σ [4⟨W_t, g(X_t)⟩ - ‖g(X_t)‖²]

    Конечные таблицы и покрытия: полный перебор; шары: максимизация тем же
    проекционным градиентом, что и ERM, на псевдоцелях f⋆(X_t) + 2W_t.

    Args:
        batch: траектория с записью шума
        family: семейство
        truth: f⋆ (без него члены считаются уже центрированными)
        cover: покрытие, по элементам которого берётся максимум
        opts: настройки оптимизатора
    """
    xs, noise = batch.xs, batch.noise
    base = np.zeros_like(noise) if truth is None else evaluate(family, truth, xs)

    if cover is not None or family.kind == "finite_table":
        candidates = cover.elements if cover is not None else range(family.size)
        if candidates is None:
            raise ValidationError("Cover has no elements (cardinality cap reached)")
        return max(_offset_value(noise, evaluate(family, m, xs) - base) for m in candidates)

    if family.kind not in ("linear_ball", "glm_ball"):
        raise ValidationError(f"No martingale complexity routine for family kind: {family.kind}")

    link = family.link if family.kind == "glm_ball" else LinkFn()
    pseudo = TrajectoryBatch(xs=xs, ys=base + 2.0 * noise, noise=2.0 * noise,
                             seed=batch.seed, kind=batch.kind)
    result = erm_glm(pseudo, family.B, link, opts)
    value = 4.0 * float(np.mean(np.sum(noise ** 2, axis=1))) - result.empirical_risk
    return max(value, 0.0) if truth is not None else value
