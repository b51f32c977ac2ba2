"""
Монте-Карло свипы: кривые риска по T, свип по скорости перемешивания,
поиск времени прогрева, восстановление параметров, оценка против факта
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np
from scipy import linalg

from bounds import BoundReport, main_bound
from diagnostics import (
    dependency_matrix_finite,
    dependency_opnorm,
    exact_moments,
    hyper_ratio,
    martingale_complexity_general,
    martingale_complexity_linear,
)
from errors import LabError, ValidationError
from estimators import (
    OptimizerOpts,
    RiskEstimate,
    average_covariance_mc,
    check_erm_dominance,
    excess_risk_exact,
    excess_risk_mc,
    fit,
)
from hypotheses import HypothesisSpec, check_realizable, evaluate, family_from_dict
from processes import (
    ProcessSpec,
    average_gramian,
    process_from_dict,
    simulate,
    spectral_radius,
    with_truncation,
)
from utils import SEED_RULE, derive_seed, format_float, standard_error


logger = logging.getLogger(__name__)

EXPERIMENT_KINDS = ("risk_curve", "mixing_sweep", "parameter_recovery", "bound_vs_actual")
SWEEP_PARAMS = ("rho", "noise_std", "h_scale")
DEFAULT_N_EVAL = 200
DEFAULT_SLOPE_TOL = 0.15
GLM_RATE_FLOOR = 1e-6
RECOVERY_TOL = 1e-9
NOT_REACHED = "not reached"

# Потоки случайности внутри реплики: derive_seed(master, cell_id, replicate, поток)
TRAIN_STREAM = 0
EVAL_STREAM = 1
OPTIMIZER_STREAM = 2

RESULT_HEADER = [
    "cell_id", "T", "param", "replicate", "excess_risk", "risk_se",
    "m_t", "fit_iters", "projection_active", "notes",
]
AGGREGATE_HEADER = ["cell_id", "T", "param", "n_rep", "mean_risk", "risk_se", "mean_m_t"]
RECOVERY_HEADER = [
    "cell_id", "T", "param", "replicate", "param_error", "lambda_min",
    "conversion_lhs", "excess_risk", "bound_side", "conversion_ok",
]
BOUND_HEADER = [
    "T", "param", "actual_mean", "actual_se", "em_t", "r", "B", "C",
    "gamma_opnorm", "log_card", "rhs", "slack", "holds",
]


# ---------------------------------------------------------------------------
# Конфигурация свипа
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepConfig:
    """Конфигурация свипа: шаблон процесса, семейство, сетки T и параметра"""

    kind: str
    process_template: dict
    family: HypothesisSpec
    T_grid: tuple
    n_rep: int
    master_seed: int
    param_name: Optional[str] = None
    param_grid: tuple = (None,)
    n_eval: int = DEFAULT_N_EVAL
    threads: Optional[int] = None
    opts: OptimizerOpts = field(default_factory=OptimizerOpts)
    alpha: float = 2.0
    slope_tol: float = DEFAULT_SLOPE_TOL
    outputs: str = "experiment.csv"

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ValidationError(f"Unknown experiment kind: {self.kind}")
        if not self.T_grid or not self.param_grid:
            raise ValidationError("T_grid and param_grid must be non-empty")
        if any(int(T) < 1 for T in self.T_grid):
            raise ValidationError(f"T_grid must contain positive integers, got {list(self.T_grid)}")
        if self.n_rep < 2:
            raise ValidationError(f"n_rep must be at least 2, got {self.n_rep}")
        if self.n_eval < 2:
            raise ValidationError(f"n_eval must be at least 2, got {self.n_eval}")
        if self.param_name is not None and self.param_name not in SWEEP_PARAMS:
            raise ValidationError(f"Unknown sweep parameter: {self.param_name}")
        if self.param_name is None and self.param_grid != (None,):
            raise ValidationError("param_grid given without param name")

    @classmethod
    def from_dict(cls, doc: dict, master_seed: int, threads: Optional[int] = None,
                  n_eval: int = DEFAULT_N_EVAL, opts: Optional[OptimizerOpts] = None) -> "SweepConfig":
        """
        Конфигурация из JSON-документа команды experiment

        Ключи: kind, process, family, T_grid, n_rep, [param, param_grid,
        n_eval, optimizer, alpha, slope_tol, outputs]
        """
        opts = opts or OptimizerOpts()
        try:
            if "optimizer" in doc:
                opts = replace(opts, **{k: v for k, v in doc["optimizer"].items() if k != "seed"})

            param_name = doc.get("param")
            grid = tuple(float(v) for v in doc.get("param_grid", [])) if param_name else (None,)
            cfg = cls(
                kind=doc["kind"],
                process_template=dict(doc["process"]),
                family=family_from_dict(doc["family"]),
                T_grid=tuple(int(T) for T in doc["T_grid"]),
                n_rep=int(doc["n_rep"]),
                master_seed=int(master_seed),
                param_name=param_name,
                param_grid=grid,
                n_eval=int(doc.get("n_eval", n_eval)),
                threads=threads,
                opts=opts,
                alpha=float(doc.get("alpha", 2.0)),
                slope_tol=float(doc.get("slope_tol", DEFAULT_SLOPE_TOL)),
                outputs=str(doc.get("outputs", "experiment.csv")),
            )
            # все процессы сетки строятся заранее, чтобы ошибки всплыли до записи файлов
            for value in cfg.param_grid:
                instantiate(cfg.process_template, cfg.param_name, value)
        except ValidationError:
            raise
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ValidationError(f"Malformed experiment config: {exc}") from exc
        return cfg

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "process": self.process_template,
            "family": self.family.to_dict(),
            "T_grid": list(self.T_grid),
            "n_rep": self.n_rep,
            "param": self.param_name,
            "param_grid": [] if self.param_name is None else list(self.param_grid),
            "n_eval": self.n_eval,
            "optimizer": {
                "restarts": self.opts.restarts,
                "max_iter": self.opts.max_iter,
                "grad_tol": self.opts.grad_tol,
                "armijo": self.opts.armijo,
                "shrink": self.opts.shrink,
            },
            "alpha": self.alpha,
            "slope_tol": self.slope_tol,
            "outputs": self.outputs,
        }


def _rescale_radius(A: np.ndarray, rho: float) -> np.ndarray:
    if not 0.0 <= rho < 1.0:
        raise ValidationError(f"rho must lie in [0, 1), got {rho}")
    radius = spectral_radius(A)
    if radius == 0.0:
        if rho == 0.0:
            return np.zeros_like(A)
        raise ValidationError(f"A_star is nilpotent and cannot be rescaled to spectral radius {rho}")
    return A * (rho / radius)


def _lyapunov_rate(A: np.ndarray, P: np.ndarray) -> float:
    """Наименьшее ρ с AᵀPA ⪯ ρP (с запасом и нижним порогом)"""
    rate = float(linalg.eigvalsh(A.T @ P @ A, P).max())
    rate = max(rate * (1.0 + 1e-9), GLM_RATE_FLOOR)
    if rate >= 1.0:
        raise ValidationError(f"No Lyapunov certificate below 1 for rescaled A_star (rate {rate:.6g})")
    return rate


def instantiate(template: dict, param_name: Optional[str], value: Optional[float]) -> ProcessSpec:
    """
    Процесс ячейки: шаблон с подставленным свободным параметром

    rho: A⋆ масштабируется до спектрального радиуса ρ (для GLM пересчитывается
    ρ сертификата Ляпунова), h_scale: H умножается на значение, noise_std:
    шум наблюдений конечной цепи. Динамика всегда без усечения шума.
    """
    spec = process_from_dict(template)
    if spec.kind != "finite_chain":
        spec = with_truncation(spec, None)
    if param_name is None:
        return spec

    value = float(value)
    if param_name == "noise_std":
        if spec.kind != "finite_chain":
            raise ValidationError("noise_std applies to finite chains only")
        return replace(spec, noise_std=value)

    if spec.kind == "finite_chain":
        raise ValidationError(f"Parameter {param_name} applies to LDS and GLM processes only")

    if param_name == "h_scale":
        return replace(spec, H=spec.H * value)
    elif param_name == "rho":
        A = _rescale_radius(spec.A_star, value)
        if spec.kind == "lds":
            return replace(spec, A_star=A)
        return replace(spec, A_star=A, rho=_lyapunov_rate(A, spec.P_star))
    else:
        raise ValidationError(f"Unknown sweep parameter: {param_name}")


# ---------------------------------------------------------------------------
# Результаты
# ---------------------------------------------------------------------------

@dataclass
class ExperimentRow:
    cell_id: int
    T: int
    param: float
    replicate: int
    excess_risk: float
    risk_se: float
    m_t: float
    fit_iters: int
    projection_active: bool
    notes: str = ""
    dominance_ok: bool = True
    recovery: Optional[dict] = None


@dataclass
class CellAggregate:
    cell_id: int
    T: int
    param: float
    n_rep: int
    mean_risk: float
    risk_se: float
    mean_m_t: float


@dataclass
class ExperimentResult:
    """Строки реплик (отсортированы по (cell_id, replicate)) и сводка эксперимента"""

    kind: str
    rows: list[ExperimentRow]
    config: Optional[SweepConfig] = None
    summary: dict = field(default_factory=dict)
    bounds: list[dict] = field(default_factory=list)

    @property
    def aggregates(self) -> list[CellAggregate]:
        return aggregate(self)


@dataclass
class _Cell:
    cell_id: int
    T: int
    param: Optional[float]
    process: ProcessSpec
    truth: object
    exact_risk: bool
    gram: Optional[np.ndarray] = None


def _build_cells(cfg: SweepConfig) -> list[_Cell]:
    cells = []
    for p_idx, value in enumerate(cfg.param_grid):
        process = instantiate(cfg.process_template, cfg.param_name, value)
        truth = check_realizable(cfg.family, process)
        exact = process.kind == "finite_chain" or (
            process.kind == "lds" and cfg.family.kind == "linear_ball"
        )
        for t_idx, T in enumerate(cfg.T_grid):
            gram = None
            if cfg.kind == "parameter_recovery" and process.kind == "lds":
                gram = average_gramian(process.A_star, process.H, T)
            cells.append(_Cell(
                cell_id=p_idx * len(cfg.T_grid) + t_idx,
                T=int(T),
                param=value,
                process=process,
                truth=truth,
                exact_risk=exact,
                gram=gram,
            ))
    return cells


def _martingale(batch, family: HypothesisSpec, truth, opts: OptimizerOpts) -> float:
    if family.kind == "linear_ball":
        return martingale_complexity_linear(batch)
    return martingale_complexity_general(batch, family, truth=truth, opts=opts)


def _recovery(cfg: SweepConfig, cell: _Cell, parameter, risk: RiskEstimate, eval_seed: int) -> dict:
    process, family = cell.process, cfg.family
    delta = np.asarray(parameter, dtype=float) - np.asarray(cell.truth, dtype=float)
    param_error = float(np.sum(delta ** 2))

    gram = cell.gram if cell.gram is not None else average_covariance_mc(
        process, cell.T, cfg.n_eval, eval_seed
    )
    lam = float(linalg.eigvalsh(gram).min())
    zeta = family.link.zeta if family.kind == "glm_ball" else 1.0
    lhs = zeta ** 2 * lam * param_error

    if lam > 0.0:
        h_norm = float(linalg.norm(process.H, 2))
        bound_side = h_norm ** 2 * process.dx ** 2 / (cell.T * lam * zeta ** 2)
    else:
        logger.error(f"Singular average covariance in cell {cell.cell_id} (lambda_min={lam:.3g})")
        bound_side = math.inf
    ok = risk.value >= lhs - RECOVERY_TOL * max(1.0, lhs)
    return {
        "param_error": param_error,
        "lambda_min": lam,
        "conversion_lhs": lhs,
        "bound_side": bound_side,
        "conversion_ok": ok,
    }


def _run_replicate(cfg: SweepConfig, cell: _Cell, rep: int) -> ExperimentRow:
    family, process, T = cfg.family, cell.process, cell.T
    eval_seed = derive_seed(cfg.master_seed, cell.cell_id, rep, EVAL_STREAM)
    opts = replace(cfg.opts, seed=derive_seed(cfg.master_seed, cell.cell_id, rep, OPTIMIZER_STREAM))
    try:
        batch = simulate(process, T, derive_seed(cfg.master_seed, cell.cell_id, rep, TRAIN_STREAM))
        result = fit(batch, family, opts)
        notes = list(result.notes)
        dominance = check_erm_dominance(batch, family, result, cell.truth)
        if not dominance:
            notes.append("erm_dominance_failed")

        if cell.exact_risk:
            risk = excess_risk_exact(result.parameter, cell.truth, process, T, family)
        else:
            risk = excess_risk_mc(result.parameter, cell.truth, process, T, cfg.n_eval, eval_seed, family)

        recovery = None
        if cfg.kind == "parameter_recovery":
            recovery = _recovery(cfg, cell, result.parameter, risk, eval_seed)
            if not recovery["conversion_ok"]:
                notes.append("conversion_failed")

        m_t = _martingale(batch, family, cell.truth, opts)
    except LabError as exc:
        raise type(exc)(f"cell {cell.cell_id} (T={T}, param={cell.param}) replicate {rep}: {exc}") from exc

    return ExperimentRow(
        cell_id=cell.cell_id,
        T=T,
        param=math.nan if cell.param is None else float(cell.param),
        replicate=rep,
        excess_risk=risk.value,
        risk_se=risk.std_error,
        m_t=m_t,
        fit_iters=result.trace.iterations,
        projection_active=result.trace.projection_active,
        notes=";".join(notes),
        dominance_ok=dominance,
        recovery=recovery,
    )


def _run_sweep(cfg: SweepConfig) -> tuple[list[_Cell], list[ExperimentRow]]:
    cells = _build_cells(cfg)
    tasks = [(cell, rep) for cell in cells for rep in range(cfg.n_rep)]
    threads = cfg.threads or os.cpu_count() or 1
    logger.info(f"Running {cfg.kind}: {len(cells)} cells x {cfg.n_rep} replicates on {threads} threads")

    with ThreadPoolExecutor(max_workers=threads) as pool:
        rows = list(pool.map(lambda task: _run_replicate(cfg, *task), tasks))
    rows.sort(key=lambda row: (row.cell_id, row.replicate))

    expected = len(cfg.T_grid) * len(cfg.param_grid) * cfg.n_rep
    if len(rows) != expected:
        raise LabError(f"Sweep produced {len(rows)} rows, expected {expected}")
    failed = sum(not row.dominance_ok for row in rows)
    if failed:
        logger.warning(f"ERM dominance failed on {failed}/{len(rows)} replicates")
    return cells, rows


# ---------------------------------------------------------------------------
# Агрегаты
# ---------------------------------------------------------------------------

def aggregate(result: ExperimentResult) -> list[CellAggregate]:
    """Средние по ячейкам, se = sd/√n_rep"""
    groups: dict[int, list[ExperimentRow]] = {}
    for row in result.rows:
        groups.setdefault(row.cell_id, []).append(row)

    out = []
    for cell_id in sorted(groups):
        rows = groups[cell_id]
        risks = [row.excess_risk for row in rows]
        out.append(CellAggregate(
            cell_id=cell_id,
            T=rows[0].T,
            param=rows[0].param,
            n_rep=len(rows),
            mean_risk=float(np.mean(risks)),
            risk_se=standard_error(risks),
            mean_m_t=float(np.mean([row.m_t for row in rows])),
        ))
    return out


def slope_fit(Ts, risks) -> float:
    """Наклон МНК-прямой log(risk) от log(T)"""
    Ts, risks = np.asarray(Ts, dtype=float), np.asarray(risks, dtype=float)
    keep = (Ts > 0.0) & (risks > 0.0)
    if keep.sum() < 2:
        raise ValidationError("Slope fit needs at least two points with positive risk")
    return float(np.polyfit(np.log(Ts[keep]), np.log(risks[keep]), 1)[0])


def _param_key(param: float) -> str:
    return format_float(param)


def _by_param(result: ExperimentResult) -> dict[str, list[CellAggregate]]:
    groups: dict[str, list[CellAggregate]] = {}
    for agg in aggregate(result):
        groups.setdefault(_param_key(agg.param), []).append(agg)
    for aggs in groups.values():
        aggs.sort(key=lambda a: a.T)
    return groups


# ---------------------------------------------------------------------------
# Эксперименты
# ---------------------------------------------------------------------------

def risk_curve(cfg: SweepConfig) -> ExperimentResult:
    """
    Избыточный риск по сетке T: симуляция, подгонка, риск, M_T на каждую реплику

    В сводке: наклон log-log средних рисков для каждого значения параметра.
    """
    _, rows = _run_sweep(cfg)
    result = ExperimentResult(kind=cfg.kind, rows=rows, config=cfg)
    slopes = {}
    for key, aggs in _by_param(result).items():
        try:
            slopes[key] = slope_fit([a.T for a in aggs], [a.mean_risk for a in aggs])
        except ValidationError:
            slopes[key] = math.nan
    result.summary["slopes"] = slopes
    return result


def mixing_sweep(cfg: SweepConfig) -> ExperimentResult:
    """
    Инвариантность ведущего слагаемого к перемешиванию

    Для каждого ρ считается T·(средний риск) на наибольшем T; статистика:
    max/min этих величин по ρ.
    """
    if cfg.param_name != "rho":
        raise ValidationError(f"Mixing sweep runs over rho, got param={cfg.param_name}")
    result = risk_curve(cfg)
    T_max = max(cfg.T_grid)

    scaled = {
        _param_key(agg.param): T_max * agg.mean_risk
        for agg in aggregate(result) if agg.T == T_max
    }
    low, high = min(scaled.values()), max(scaled.values())
    invariance = high / low if low > 0.0 else math.inf
    logger.info(f"Mixing sweep at T={T_max}: invariance statistic {invariance:.4g}")

    result.summary.update({"T_max": T_max, "scaled_risk": scaled, "invariance": invariance})
    if len(set(cfg.T_grid)) >= 4:
        result.summary["burn_in"] = burn_in_detect(result, cfg.slope_tol)
    return result


def burn_in_detect(result: ExperimentResult, slope_tol: float = DEFAULT_SLOPE_TOL) -> dict[str, Union[int, str]]:
    """
    Время прогрева T* для каждого значения параметра

    Наименьший T сетки, после которого все локальные наклоны log-log
    лежат в −1 ± slope_tol; иначе "not reached".
    """
    out: dict[str, Union[int, str]] = {}
    for key, aggs in _by_param(result).items():
        if len(aggs) < 4:
            raise ValidationError(f"Burn-in detection needs at least 4 grid points, param {key} has {len(aggs)}")
        Ts = np.log([a.T for a in aggs])
        risks = np.array([a.mean_risk for a in aggs])
        if np.any(risks <= 0.0):
            out[key] = NOT_REACHED
            continue
        local = np.diff(np.log(risks)) / np.diff(Ts)
        inside = np.abs(local + 1.0) <= slope_tol

        start = len(local)
        while start > 0 and inside[start - 1]:
            start -= 1
        out[key] = aggs[start].T if start < len(local) else NOT_REACHED
    return out


def parameter_recovery_curve(cfg: SweepConfig) -> ExperimentResult:
    """
    Ошибка ‖Â − A⋆‖_F² и проверка перехода риск ≥ ζ²λ_min(Γ̄_T)‖Δ‖_F² на каждой реплике
    """
    if cfg.family.kind not in ("linear_ball", "glm_ball"):
        raise ValidationError(f"Parameter recovery needs a linear or GLM family, got {cfg.family.kind}")
    _, rows = _run_sweep(cfg)
    result = ExperimentResult(kind=cfg.kind, rows=rows, config=cfg)

    checked = [row for row in rows if row.dominance_ok]
    failures = sum(not row.recovery["conversion_ok"] for row in checked)
    if failures:
        logger.error(f"Conversion inequality failed on {failures}/{len(checked)} replicates")

    scaled = {}
    for agg in aggregate(result):
        cell_rows = [row for row in rows if row.cell_id == agg.cell_id]
        errors = [row.recovery["param_error"] for row in cell_rows]
        lam = cell_rows[0].recovery["lambda_min"]
        scaled[str(agg.cell_id)] = float(np.mean(errors)) * agg.T * lam
    result.summary.update({"conversion_failures": failures, "scaled_param_error": scaled})
    return result


def _cell_bound(cfg: SweepConfig, cell: _Cell, rows: list[ExperimentRow]) -> dict:
    process, family, T = cell.process, cfg.family, cell.T
    star = evaluate(family, cell.truth, process.atoms)
    centered = [evaluate(family, m, process.atoms) - star for m in range(family.size)]
    moments = [exact_moments(process, values, T) for values in centered]
    nonzero = [(values, s, f) for values, (s, f) in zip(centered, moments) if s > 0.0]

    risks = [row.excess_risk for row in rows]
    actual, actual_se = float(np.mean(risks)), standard_error(risks)
    em_t = float(np.mean([row.m_t for row in rows]))
    gamma = dependency_opnorm(dependency_matrix_finite(process, T))

    if not nonzero:
        report = BoundReport(em_t=em_t, r=0.0, union_term=0.0, total=8.0 * em_t, log_union=-math.inf)
        B = C = 0.0
        log_card = -math.inf
    else:
        r = max(math.sqrt(s) for _, s, _ in nonzero)
        B = max(float(np.sqrt(np.sum(values ** 2, axis=1).max())) for values, _, _ in nonzero)
        C = max(hyper_ratio(s, f, cfg.alpha) for _, s, f in nonzero)
        log_card = math.log(len(nonzero))
        report = main_bound(em_t, r, B, log_card, C, cfg.alpha, gamma, T)

    holds = actual <= report.total
    if not holds:
        logger.error(f"Bound violated at T={T}: actual {actual:.6g} > rhs {report.total:.6g}")
    return {
        "T": T,
        "param": math.nan if cell.param is None else float(cell.param),
        "actual_mean": actual,
        "actual_se": actual_se,
        "em_t": em_t,
        "r": report.r,
        "B": B,
        "C": C,
        "gamma_opnorm": gamma,
        "log_card": log_card,
        "rhs": report.total,
        "slack": report.total - actual,
        "holds": holds,
    }


def bound_vs_actual(cfg: SweepConfig) -> ExperimentResult:
    """
    Фактический средний риск против полной оценки через M_T, точную
    константу гиперконтрактивности и точную ‖Γ_dep‖ (семейство само служит сетью)
    """
    template = process_from_dict(cfg.process_template)
    if template.kind != "finite_chain" or cfg.family.kind != "finite_table":
        raise ValidationError("bound_vs_actual needs a finite table family on a finite chain")

    cells, rows = _run_sweep(cfg)
    result = ExperimentResult(kind=cfg.kind, rows=rows, config=cfg)
    for cell in cells:
        cell_rows = [row for row in rows if row.cell_id == cell.cell_id]
        result.bounds.append(_cell_bound(cfg, cell, cell_rows))
    result.summary["violations"] = sum(not b["holds"] for b in result.bounds)
    return result


def run_experiment(cfg: SweepConfig) -> ExperimentResult:
    """Диспетчер по виду эксперимента"""
    if cfg.kind == "risk_curve":
        return risk_curve(cfg)
    elif cfg.kind == "mixing_sweep":
        return mixing_sweep(cfg)
    elif cfg.kind == "parameter_recovery":
        return parameter_recovery_curve(cfg)
    elif cfg.kind == "bound_vs_actual":
        return bound_vs_actual(cfg)
    else:
        raise ValidationError(f"Unknown experiment kind: {cfg.kind}")


# ---------------------------------------------------------------------------
# Выгрузка
# ---------------------------------------------------------------------------

def result_rows(result: ExperimentResult) -> tuple[list[str], list[list]]:
    rows = [
        [row.cell_id, row.T, row.param, row.replicate, row.excess_risk, row.risk_se,
         row.m_t, row.fit_iters, int(row.projection_active), row.notes]
        for row in result.rows
    ]
    return RESULT_HEADER, rows


def aggregate_rows(result: ExperimentResult) -> tuple[list[str], list[list]]:
    rows = [
        [a.cell_id, a.T, a.param, a.n_rep, a.mean_risk, a.risk_se, a.mean_m_t]
        for a in aggregate(result)
    ]
    return AGGREGATE_HEADER, rows


def recovery_rows(result: ExperimentResult) -> tuple[list[str], list[list]]:
    rows = [
        [row.cell_id, row.T, row.param, row.replicate,
         row.recovery["param_error"], row.recovery["lambda_min"], row.recovery["conversion_lhs"],
         row.excess_risk, row.recovery["bound_side"], int(row.recovery["conversion_ok"])]
        for row in result.rows if row.recovery is not None
    ]
    return RECOVERY_HEADER, rows


def bound_rows(result: ExperimentResult) -> tuple[list[str], list[list]]:
    rows = [[b[key] if not isinstance(b[key], bool) else int(b[key]) for key in BOUND_HEADER]
            for b in result.bounds]
    return BOUND_HEADER, rows


def seed_ledger(cfg: SweepConfig) -> dict:
    """Мастер-сид, правило вывода и список ячеек: достаточно для повтора каждой реплики"""
    return {
        "master_seed": cfg.master_seed,
        "seed_rule": SEED_RULE,
        "derivation": "derive_seed(master_seed, cell_id, replicate, stream)",
        "streams": {"train": TRAIN_STREAM, "eval": EVAL_STREAM, "optimizer": OPTIMIZER_STREAM},
        "n_rep": cfg.n_rep,
        "cells": [
            {"cell_id": p_idx * len(cfg.T_grid) + t_idx, "T": int(T), "param": value}
            for p_idx, value in enumerate(cfg.param_grid)
            for t_idx, T in enumerate(cfg.T_grid)
        ],
    }
