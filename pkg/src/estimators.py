"""
Оценщик наименьших квадратов по семействам гипотез и избыточный риск
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
from scipy import linalg

from errors import NumericalError, ValidationError
from hypotheses import FiniteTable, HypothesisSpec, evaluate
from processes import (
    LinkFn,
    ProcessSpec,
    TrajectoryBatch,
    average_gramian,
    propagated_marginals,
    simulate_ensemble,
)
from utils import derive_seed, make_rng, standard_error


logger = logging.getLogger(__name__)

PINV_RTOL = 1e-10
BOUNDARY_TOL = 1e-9
MC_CHUNK = 32


@dataclass
class OptimizerTrace:
    """След оптимизатора"""

    iterations: int = 0
    grad_norm: float = 0.0
    restarts: int = 0
    projection_active: bool = False


@dataclass
class FitResult:
    """Результат подгонки: параметр, эмпирический риск, след оптимизатора"""

    parameter: object
    empirical_risk: float
    trace: OptimizerTrace = field(default_factory=OptimizerTrace)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        param = self.parameter
        return {
            "parameter": param.tolist() if isinstance(param, np.ndarray) else param,
            "empirical_risk": self.empirical_risk,
            "trace": asdict(self.trace),
            "notes": list(self.notes),
        }


@dataclass
class RiskEstimate:
    """Избыточный риск ‖f̂ - f⋆‖²_{L²}"""

    value: float
    std_error: float
    method: str

    def to_dict(self) -> dict:
        return {"value": self.value, "std_error": self.std_error, "method": self.method}


@dataclass(frozen=True)
class OptimizerOpts:
    """Настройки проекционного градиентного спуска"""

    restarts: int = 5
    max_iter: int = 10_000
    grad_tol: float = 1e-8
    armijo: float = 1e-4
    shrink: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1 or self.max_iter < 1:
            raise ValidationError(f"restarts and max_iter must be >= 1, got {self.restarts}, {self.max_iter}")
        if not 0.0 < self.shrink < 1.0:
            raise ValidationError(f"shrink must lie in (0, 1), got {self.shrink}")


def project_ball(param: np.ndarray, B: float) -> tuple[np.ndarray, bool]:
    """Радиальная проекция на шар ‖·‖_F ≤ B"""
    norm = float(np.linalg.norm(param))
    if norm > B:
        return param * (B / norm), True
    return param, False


def _residual_risk(residuals: np.ndarray) -> float:
    return float(np.mean(np.sum(residuals ** 2, axis=1)))


def lse_linear(batch: TrajectoryBatch, B: float) -> FitResult:
    """
    Линейный МНК через псевдообратную с радиальной проекцией на шар

    Args:
        batch: обучающая траектория
        B: радиус шара по норме Фробениуса

    Returns:
        FitResult с матрицей Â размера d_y×d_x
    """
    xs, ys = batch.xs, batch.ys
    param = (linalg.pinv(xs, rtol=PINV_RTOL) @ ys).T
    param, active = project_ball(param, B)
    risk = _residual_risk(ys - xs @ param.T)
    return FitResult(parameter=param, empirical_risk=risk,
                     trace=OptimizerTrace(projection_active=active))


def _glm_loss(param, xs, ys, link: LinkFn) -> float:
    return _residual_risk(ys - link(xs @ param.T))


def _glm_grad(param, xs, ys, link: LinkFn) -> np.ndarray:
    z = xs @ param.T
    residual = link(z) - ys
    return (2.0 / len(xs)) * (residual * link.derivative(z)).T @ xs


def _projected_descent(start: np.ndarray, xs, ys, link: LinkFn, B: float,
                       step: float, opts: OptimizerOpts) -> tuple[np.ndarray, float, int, float]:
    param, _ = project_ball(start, B)
    loss = _glm_loss(param, xs, ys, link)
    if not math.isfinite(loss):
        raise NumericalError(f"Non-finite loss at iterate {param.tolist()}")

    grad_norm = float("inf")
    it = 0
    for it in range(1, opts.max_iter + 1):
        grad = _glm_grad(param, xs, ys, link)
        mapping = (param - project_ball(param - step * grad, B)[0]) / step
        grad_norm = float(np.linalg.norm(mapping))
        if grad_norm < opts.grad_tol:
            break

        while True:
            candidate, _ = project_ball(param - step * grad, B)
            cand_loss = _glm_loss(candidate, xs, ys, link)
            if not math.isfinite(cand_loss):
                raise NumericalError(f"Non-finite loss at iterate {candidate.tolist()}")
            decrease = opts.armijo / step * float(np.sum((candidate - param) ** 2))
            if cand_loss <= loss - decrease:
                break
            step *= opts.shrink
            if step < 1e-300:
                return param, loss, it, grad_norm

        param, loss = candidate, cand_loss
        step /= opts.shrink

    return param, loss, it, grad_norm


def erm_glm(batch: TrajectoryBatch, B: float, link: LinkFn,
            opts: Optional[OptimizerOpts] = None) -> FitResult:
    """
    ERM для σ(Ax) на шаре: проекционный градиент с поиском Армихо и рестартами

    Первый рестарт стартует из линейного МНК, остальные: случайные точки шара.
    Возвращается лучший по эмпирическому риску результат.
    """
    opts = opts or OptimizerOpts()
    xs, ys = batch.xs, batch.ys
    d_out, d_in = ys.shape[1], xs.shape[1]

    top = float(linalg.eigvalsh(xs.T @ xs).max())
    step0 = len(xs) / (2.0 * top) if top > 0.0 else 1.0

    rng = make_rng(opts.seed)
    starts = [lse_linear(batch, B).parameter]
    for _ in range(opts.restarts - 1):
        direction = rng.standard_normal((d_out, d_in))
        direction /= max(np.linalg.norm(direction), 1e-300)
        starts.append(B * rng.random() ** (1.0 / direction.size) * direction)

    best = None
    for start in starts:
        param, loss, iters, grad_norm = _projected_descent(start, xs, ys, link, B, step0, opts)
        if best is None or loss < best[1]:
            best = (param, loss, iters, grad_norm)

    param, loss, iters, grad_norm = best
    active = float(np.linalg.norm(param)) >= B - BOUNDARY_TOL
    notes = []
    if grad_norm >= opts.grad_tol:
        notes.append(f"optimizer stopped at gradient-mapping norm {grad_norm:.3g}")
    return FitResult(
        parameter=param,
        empirical_risk=loss,
        trace=OptimizerTrace(iterations=iters, grad_norm=grad_norm,
                             restarts=opts.restarts, projection_active=active),
        notes=notes,
    )


def _table_states(batch: TrajectoryBatch, family: FiniteTable) -> np.ndarray:
    if batch.states is not None and batch.states.max() < family.atoms.shape[0]:
        expected = family.atoms[batch.states]
        if np.abs(expected - batch.xs).max() <= 1e-12:
            return batch.states
    return family.state_index(batch.xs)


def erm_finite(batch: TrajectoryBatch, family: FiniteTable) -> FitResult:
    """Полный перебор конечной таблицы; при равенстве рисков: наименьший индекс"""
    states = _table_states(batch, family)
    residual = family.functions[:, states, :] - batch.ys[None]
    risks = np.mean(np.sum(residual ** 2, axis=2), axis=1)
    idx = int(np.argmin(risks))
    return FitResult(parameter=idx, empirical_risk=float(risks[idx]),
                     trace=OptimizerTrace(iterations=family.size))


def empirical_risk(batch: TrajectoryBatch, family: HypothesisSpec, member) -> float:
    """(1/T) Σ ‖Y_t - f(X_t)‖²"""
    states = _table_states(batch, family) if family.kind == "finite_table" else None
    return _residual_risk(batch.ys - evaluate(family, member, batch.xs, states=states))


def fit(batch: TrajectoryBatch, family: HypothesisSpec,
        opts: Optional[OptimizerOpts] = None) -> FitResult:
    """Диспетчер оценщика по типу семейства"""
    if family.kind == "linear_ball":
        return lse_linear(batch, family.B)
    elif family.kind == "glm_ball":
        return erm_glm(batch, family.B, family.link, opts)
    elif family.kind == "finite_table":
        return erm_finite(batch, family)
    else:
        raise ValidationError(f"No estimator for family kind: {family.kind}")


def check_erm_dominance(batch: TrajectoryBatch, family: HypothesisSpec, result: FitResult,
                        truth, tol: float = 1e-9) -> bool:
    """Эмпирический риск f̂ не больше риска f⋆ на той же траектории"""
    truth_risk = empirical_risk(batch, family, truth)
    if result.empirical_risk > truth_risk + tol:
        logger.warning(
            f"ERM dominance failed: fitted risk {result.empirical_risk:.6g} > truth risk {truth_risk:.6g}"
        )
        return False
    return True


# ---------------------------------------------------------------------------
# Избыточный риск
# ---------------------------------------------------------------------------

def excess_risk_exact(f_hat, f_star, process: ProcessSpec, T: int,
                      family: Optional[HypothesisSpec] = None) -> RiskEstimate:
    """
    Точный избыточный риск

    Для цепей: через распространённые маргиналы ((1/T) Σ_t Σ_k μ_t(k)‖Δf(атом_k)‖²),
    для LDS с линейными f: через грамианы ((1/T) Σ_t tr(ΔᵀΔ Γ_t)).

    Args:
        f_hat, f_star: члены семейства (для цепи без family: таблицы значений на атомах)
        process: процесс
        T: горизонт
        family: семейство, к которому относятся f_hat и f_star
    """
    if T < 1:
        raise ValidationError(f"T must be a positive integer, got {T}")

    if process.kind == "finite_chain":
        if family is not None:
            hat = evaluate(family, f_hat, process.atoms)
            star = evaluate(family, f_star, process.atoms)
        else:
            hat = np.asarray(f_hat, dtype=float).reshape(process.n_states, -1)
            star = np.asarray(f_star, dtype=float).reshape(process.n_states, -1)
        sq = np.sum((hat - star) ** 2, axis=1)
        value = float(np.mean(propagated_marginals(process, T) @ sq))
        return RiskEstimate(value=value, std_error=0.0, method="exact_marginal")

    elif process.kind == "lds" and (family is None or family.kind == "linear_ball"):
        if process.trunc_radius is not None:
            raise ValidationError("Truncated LDS has no closed-form gramians; use excess_risk_mc")
        delta = np.asarray(f_hat, dtype=float) - np.asarray(f_star, dtype=float)
        gram = average_gramian(process.A_star, process.H, T)
        value = float(np.trace(delta.T @ delta @ gram))
        return RiskEstimate(value=value, std_error=0.0, method="exact_gramian")

    raise ValidationError(
        f"No exact risk for process {process.kind} with family "
        f"{family.kind if family is not None else 'matrix'}; use excess_risk_mc"
    )


def _member_values(family: Optional[HypothesisSpec], member, xs: np.ndarray) -> np.ndarray:
    if family is None:
        return xs @ np.asarray(member, dtype=float).T
    flat = xs.reshape(-1, xs.shape[-1])
    return evaluate(family, member, flat).reshape(xs.shape[0], xs.shape[1], -1)


def _eval_seeds(seed: int, n_eval: int) -> list[int]:
    return [derive_seed(seed, i) for i in range(n_eval)]


def excess_risk_mc_many(members: list, f_star, process: ProcessSpec, T: int, n_eval: int,
                        seed: int, family: Optional[HypothesisSpec] = None) -> list[RiskEstimate]:
    """
    Избыточный риск нескольких оценок по одним и тем же n_eval свежим траекториям

    Returns:
        список RiskEstimate в порядке members
    """
    if n_eval < 2:
        raise ValidationError(f"n_eval must be at least 2, got {n_eval}")

    seeds = _eval_seeds(seed, n_eval)
    per_traj = np.empty((len(members), n_eval))
    for lo in range(0, n_eval, MC_CHUNK):
        xs, _ = simulate_ensemble(process, T, seeds[lo:lo + MC_CHUNK])
        star = _member_values(family, f_star, xs)
        for i, member in enumerate(members):
            diff = _member_values(family, member, xs) - star
            per_traj[i, lo:lo + len(xs)] = np.mean(np.sum(diff ** 2, axis=2), axis=1)

    return [
        RiskEstimate(value=float(row.mean()), std_error=standard_error(row), method="monte_carlo")
        for row in per_traj
    ]


def excess_risk_mc(f_hat, f_star, process: ProcessSpec, T: int, n_eval: int, seed: int,
                   family: Optional[HypothesisSpec] = None) -> RiskEstimate:
    """Избыточный риск по n_eval свежим независимым траекториям того же закона"""
    return excess_risk_mc_many([f_hat], f_star, process, T, n_eval, seed, family)[0]


def average_covariance_mc(process: ProcessSpec, T: int, n_eval: int, seed: int) -> np.ndarray:
    """Γ̄_T = (1/T) Σ_t E[X_t X_tᵀ] на тех же траекториях, что excess_risk_mc с этим сидом"""
    seeds = _eval_seeds(seed, n_eval)
    total = None
    for lo in range(0, n_eval, MC_CHUNK):
        xs, _ = simulate_ensemble(process, T, seeds[lo:lo + MC_CHUNK])
        flat = xs.reshape(-1, xs.shape[-1])
        part = flat.T @ flat
        total = part if total is None else total + part
    return total / (n_eval * T)
