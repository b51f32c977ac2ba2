import argparse
import asyncio
import configparser
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from bounds import burn_in, chaining_bound, glm_constants, lds_constants
from concentration import (
    coupling_check,
    lower_isometry_check,
    moment_equivalence_check,
    samson_check,
    stationary_transfer_check,
    truncated_noise_diag,
)
from diagnostics import (
    centered_probe,
    dependency_matrix_bruteforce,
    dependency_matrix_finite,
    dependency_opnorm,
    dependency_row_bound,
    dependency_rows,
    hyper_estimate,
    martingale_complexity_general,
    martingale_complexity_linear,
    table_probe,
    toeplitz_opnorm_bound,
)
from errors import LabError, NumericalError, ValidationError
from estimators import OptimizerOpts, check_erm_dominance, excess_risk_exact, excess_risk_mc, fit
from experiments import (
    SweepConfig,
    aggregate_rows,
    bound_rows,
    recovery_rows,
    result_rows,
    run_experiment,
    seed_ledger,
)
from hypotheses import (
    GlmBall,
    certify_cover,
    check_realizable,
    cover_finite,
    cover_glm,
    cover_linear,
    cover_rows,
    ellipsoid_cover,
    ellipsoid_m_eps,
    family_from_dict,
    probe_members,
)
from processes import (
    average_gramian,
    controllability_index,
    glm_moment_bound,
    incremental_stability_probe,
    probe_link,
    process_from_dict,
    simulate,
    spectral_radius,
    stability_certificate,
    stationary_covariance,
    trajectory_rows,
)
from storage import ArtifactStore
from utils import COMMANDS, derive_seed, entropy_seed, make_rng, validate_run_config


VERSION = "1.0.0"
CERTIFY_CAP = 10_000

# Загрузка конфигурации
CONFIG_PATH = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'config.cfg')
config = configparser.ConfigParser()
config.read(CONFIG_PATH)

THREADS = config.getint('SETTINGS', 'THREADS', fallback=0)
OUT_DIR = config.get('SETTINGS', 'OUT_DIR', fallback='data/runs')
NET_CAP = config.getint('SETTINGS', 'NET_CAP', fallback=1_000_000)
DEPENDENCY_CAP = config.getint('SETTINGS', 'DEPENDENCY_CAP', fallback=2048)
BRUTE_FORCE_CAP = config.getint('SETTINGS', 'BRUTE_FORCE_CAP', fallback=2 ** 20)
TRUNCATION_BETA = config.getfloat('SETTINGS', 'TRUNCATION_BETA', fallback=4.0)
CHAINING_GRID = config.getint('SETTINGS', 'CHAINING_GRID', fallback=64)
N_EVAL = config.getint('SETTINGS', 'N_EVAL', fallback=200)

OPTIMIZER = OptimizerOpts(
    restarts=config.getint('OPTIMIZER', 'RESTARTS', fallback=5),
    max_iter=config.getint('OPTIMIZER', 'MAX_ITER', fallback=10_000),
    grad_tol=config.getfloat('OPTIMIZER', 'GRAD_TOL', fallback=1e-8),
    armijo=config.getfloat('OPTIMIZER', 'ARMIJO', fallback=1e-4),
    shrink=config.getfloat('OPTIMIZER', 'SHRINK', fallback=0.5),
)

LOG_LEVEL = config.get('LOGGING', 'LEVEL', fallback='INFO').upper()
LOG_FILE = config.get('LOGGING', 'FILE', fallback='') or None

# Настройка логирования
logging.basicConfig(level=getattr(logging, LOG_LEVEL, logging.INFO), filename=LOG_FILE)
logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    """Параметры одного запуска командной строки"""

    command: str
    config_path: str
    out_dir: str = OUT_DIR
    threads: Optional[int] = None
    master_seed: Optional[int] = None


# Артефакт: ("json", имя, данные) или ("csv", имя, (заголовок, строки))
Artifact = tuple


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def build_run_config(argv: list[str]) -> RunConfig:
    """Разбор аргументов: подкоманда и флаги --config, --out, --seed, --threads"""
    parser = _Parser(prog="mixing-lab", description="Learning from dependent data: simulation laboratory")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    for command in COMMANDS:
        cmd = sub.add_parser(command)
        cmd.add_argument("--config", required=True, metavar="PATH", help="JSON config of the command")
        cmd.add_argument("--out", default=OUT_DIR, metavar="DIR", help="output directory")
        cmd.add_argument("--seed", type=int, default=None, metavar="U64", help="master seed")
        cmd.add_argument("--threads", type=int, default=None, metavar="N", help="worker threads")

    args = parser.parse_args(argv)
    if args.command is None:
        parser.error("a command is required")
    if args.threads is not None and args.threads < 1:
        parser.error(f"--threads must be >= 1, got {args.threads}")
    return RunConfig(
        command=args.command,
        config_path=args.config,
        out_dir=args.out,
        threads=args.threads,
        master_seed=args.seed,
    )


def load_config(path: str) -> dict:
    """Чтение JSON-конфига команды"""
    if not os.path.isfile(path):
        raise ValidationError(f"Config file not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"Unreadable config {path}: {exc}") from exc


def resolve_seed(cfg: RunConfig, doc: dict) -> int:
    """Мастер-сид: --seed, затем ключ seed конфига, затем энтропия ОС"""
    if cfg.master_seed is not None:
        return int(cfg.master_seed)
    if "seed" in doc:
        try:
            return int(doc["seed"])
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"seed must be an integer, got {doc['seed']!r}") from exc
    seed = entropy_seed()
    logger.info(f"No seed given, drew master seed {seed} from OS entropy")
    return seed


# ---------------------------------------------------------------------------
# Команды
# ---------------------------------------------------------------------------

def cmd_simulate(doc: dict, seed: int, threads: Optional[int]) -> list[Artifact]:
    """Траектории процесса: trajectory_<i>.csv и описание процесса"""
    process = process_from_dict(doc["process"])
    T, n_traj = int(doc["T"]), int(doc.get("n_traj", 1))
    artifacts = [("json", "process.json", process.to_dict())]
    flags = []
    for i in range(n_traj):
        batch = simulate(process, T, derive_seed(seed, i))
        flags.append(batch.truncated_flag)
        artifacts.append(("csv", f"trajectory_{i}.csv", trajectory_rows(batch)))
    artifacts.append(("json", "simulation.json", {"T": T, "n_traj": n_traj, "truncated_flags": flags}))
    logger.info(f"Simulated {n_traj} trajectories of {process.kind}, T={T}")
    return artifacts


def _optimizer(doc: dict) -> OptimizerOpts:
    overrides = {k: v for k, v in doc.get("optimizer", {}).items() if k != "seed"}
    return replace(OPTIMIZER, **overrides)


def cmd_fit(doc: dict, seed: int, threads: Optional[int]) -> list[Artifact]:
    """Одна траектория, оценщик, избыточный риск и мартингальная сложность"""
    process = process_from_dict(doc["process"])
    family = family_from_dict(doc["family"])
    T = int(doc["T"])
    truth = check_realizable(family, process)

    batch = simulate(process, T, derive_seed(seed, 0))
    opts = replace(_optimizer(doc), seed=derive_seed(seed, 2))
    result = fit(batch, family, opts)
    dominance = check_erm_dominance(batch, family, result, truth)

    exact = process.kind == "finite_chain" or (
        process.kind == "lds" and family.kind == "linear_ball" and process.trunc_radius is None
    )
    if exact:
        risk = excess_risk_exact(result.parameter, truth, process, T, family)
    else:
        n_eval = int(doc.get("n_eval", N_EVAL))
        risk = excess_risk_mc(result.parameter, truth, process, T, n_eval, derive_seed(seed, 1), family)

    if family.kind == "linear_ball":
        m_t = martingale_complexity_linear(batch)
    else:
        m_t = martingale_complexity_general(batch, family, truth=truth, opts=opts)

    logger.info(f"Fit {family.kind} on T={T}: excess risk {risk.value:.6g} ({risk.method})")
    report = {
        "fit": result.to_dict(),
        "excess_risk": risk.to_dict(),
        "m_t": m_t,
        "erm_dominance": dominance,
    }
    return [
        ("csv", "trajectory.csv", trajectory_rows(batch)),
        ("json", "fit.json", report),
    ]


def _ball_log_cover(B: float, B_X: float, n_params: int) -> Callable[[float], float]:
    return lambda s: n_params * math.log(1.0 + 2.0 * B * B_X / s)


def _ellipsoid_log_cover(beta: float, B: float, q: float) -> Callable[[float], float]:
    def log_cover(s: float) -> float:
        m = ellipsoid_m_eps(beta, B, q, s)
        return m * math.log(1.0 + 8.0 * B * m ** q / s)
    return log_cover


def _cover_artifacts(spec: dict, seed: int) -> list[Artifact]:
    family = family_from_dict(spec["family"])
    eps = float(spec["epsilon"])
    rng = make_rng(derive_seed(seed, 3))

    if family.kind == "linear_ball":
        B_X = float(spec["B_X"])
        cert = cover_linear(family.B, B_X, eps, family.dx, family.dy, NET_CAP)
        log_cover = _ball_log_cover(family.B, B_X, family.dx * family.dy)
        states = B_X * rng.uniform(-1.0, 1.0, size=(256, family.dx)) / math.sqrt(family.dx)
    elif family.kind == "glm_ball":
        B_X = float(spec["B_X"])
        cert = cover_glm(family, B_X, eps, NET_CAP)
        log_cover = _ball_log_cover(family.B, B_X, family.dx ** 2)
        states = B_X * rng.uniform(-1.0, 1.0, size=(256, family.dx)) / math.sqrt(family.dx)
    elif family.kind == "finite_table":
        cert = cover_finite(family, eps)
        log_cover = lambda s: math.log(family.size)
        states = family.atoms
    elif family.kind == "ellipsoid":
        cert = ellipsoid_cover(family, eps, spec.get("m"), NET_CAP)
        log_cover = _ellipsoid_log_cover(family.beta, family.B_basis, family.q_growth)
        states = np.linspace(0.0, 1.0, 201)
    else:
        raise ValidationError(f"No cover for family kind: {family.kind}")

    report = cert.to_dict()
    if cert.elements is not None and cert.realized_size <= CERTIFY_CAP and family.kind != "ellipsoid":
        probes = probe_members(family, int(spec.get("n_probes", 100)), derive_seed(seed, 4))
        report["certified"], report["worst_gap"] = certify_cover(cert, family, probes, states)
    if "sigma_w" in spec:
        report["chaining_bound"] = chaining_bound(log_cover, float(spec["sigma_w"]), int(spec["T"]), family.dy,
                                                  B=cert.sup_norm_bound, n_grid=CHAINING_GRID)
    return [("json", "cover.json", report), ("csv", "cover.csv", cover_rows(cert))]


def _diagnose_chain(process, doc: dict, seed: int) -> list[Artifact]:
    T = int(doc["T"])
    G = dependency_matrix_finite(process, T, cap=DEPENDENCY_CAP)
    summary = {
        "T": T,
        "opnorm": dependency_opnorm(G),
        "row_bound": dependency_row_bound(G),
        "toeplitz_bound": toeplitz_opnorm_bound(G.lag_profile()),
        "lag_profile": G.lag_profile().tolist(),
    }
    if doc.get("brute_force"):
        brute = dependency_matrix_bruteforce(process, T, cap=BRUTE_FORCE_CAP)
        summary["brute_force_max_diff"] = float(np.abs(brute.coeffs - G.coeffs).max())
    logger.info(f"Dependency matrix for T={T} computed, opnorm={summary['opnorm']:.4g}")

    hyper = hyper_estimate(process, table_probe(process, process.dy), T, n_mc=0,
                           n_funcs=int(doc.get("n_funcs", 1000)), alpha=float(doc.get("alpha", 2.0)),
                           seed=derive_seed(seed, 0), descriptor="random tables and indicators")
    artifacts = [
        ("csv", "dependency.csv", dependency_rows(G)),
        ("json", "dependency.json", summary),
        ("json", "hyper.json", hyper.to_dict()),
    ]

    checks = doc.get("checks", {})
    if "samson" in checks:
        spec = checks["samson"]
        rows = samson_check(process, spec["g"], T, spec.get("lambda_grid", np.linspace(0.1, 1.0, 10)),
                            int(spec.get("n_mc", 100_000)), derive_seed(seed, 5))
        header = list(rows[0].to_dict()) if rows else []
        artifacts.append(("csv", "samson.csv", (header, [list(r.to_dict().values()) for r in rows])))
    if "lower_isometry" in checks:
        spec = checks["lower_isometry"]
        report = lower_isometry_check(process, spec["net"], float(spec["r"]), float(spec.get("alpha", 2.0)),
                                      float(spec["C"]), T, int(spec.get("n_mc", 100_000)), derive_seed(seed, 6))
        artifacts.append(("json", "lower_isometry.json", report.to_dict()))
    if "stationary_transfer" in checks:
        spec = checks["stationary_transfer"]
        report = stationary_transfer_check(process, spec["sample"], float(spec["r"]), T)
        artifacts.append(("json", "stationary_transfer.json", report))
    if "moment_equivalence" in checks:
        spec = checks["moment_equivalence"]
        report = moment_equivalence_check(process, spec["table"], T, float(spec["eps"]))
        artifacts.append(("json", "moment_equivalence.json", report))
    return artifacts


def _dynamics_checks(process, doc: dict, seed: int, radius: float) -> list[Artifact]:
    T = int(doc["T"])
    checks = doc.get("checks", {})
    artifacts = []
    if "truncated_noise" in checks:
        spec = checks["truncated_noise"]
        report = truncated_noise_diag(process.dv, float(spec.get("R", radius)),
                                      int(spec.get("n_mc", 100_000)), derive_seed(seed, 7))
        artifacts.append(("json", "truncated_noise.json", report))
    if "coupling" in checks:
        spec = checks["coupling"]
        report = coupling_check(process, T, float(spec.get("delta", 0.1)),
                                int(spec.get("n_rep", 200)), derive_seed(seed, 8))
        artifacts.append(("json", "coupling.json", report))
    return artifacts


def _diagnose_lds(process, doc: dict, seed: int) -> list[Artifact]:
    T = int(doc["T"])
    A, H = process.A_star, process.H
    radius = spectral_radius(A)
    rho = float(doc.get("rho", (1.0 + radius) / 2.0))
    tau = stability_certificate(A, rho)
    kappa = controllability_index(A, H)
    if kappa is None:
        raise ValidationError("Pair (A_star, H) is not controllable")

    B = float(doc.get("B", max(float(np.linalg.norm(A)), 1.0)))
    constants = lds_constants(A, H, rho, tau, kappa, T, B, TRUNCATION_BETA)
    report = burn_in("lds", {
        "tau": tau, "H_opnorm": float(linalg.norm(H, 2)), "dx": process.dx,
        "rho": rho, "mu": constants["mu"], "kappa": kappa,
    })
    structure = {
        "spectral_radius": radius,
        "rho": rho,
        "tau": tau,
        "kappa": kappa,
        "average_gramian": average_gramian(A, H, T).tolist(),
        "stationary_covariance": stationary_covariance(A, H).tolist(),
        "constants": constants,
        "burn_in": report.to_dict(),
    }
    logger.info(f"LDS structure: tau={tau:.4g} at rho={rho:.4g}, kappa={kappa}")
    return [("json", "structure.json", structure)] + _dynamics_checks(process, doc, seed, constants["R"])


def _diagnose_glm(process, doc: dict, seed: int) -> list[Artifact]:
    T = int(doc["T"])
    B = float(doc.get("B", max(float(np.linalg.norm(process.A_star)), 1.0)))
    constants = glm_constants(process, T, B, TRUNCATION_BETA)
    singular = linalg.svdvals(process.H)
    report = burn_in("glm", {
        "P_opnorm": float(np.max(np.diag(process.P_star))),
        "cond_H": float(singular.max() / singular.min()),
        "dx": process.dx,
        "zeta": process.link.zeta,
        "rho": process.rho,
    })
    expansion, lip = probe_link(process.link, seed=derive_seed(seed, 9))

    family = GlmBall(B=B, link=process.link, dx=process.dx)
    hyper = hyper_estimate(process, centered_probe(family, process.A_star), T,
                           n_mc=int(doc.get("n_mc", 200)), n_funcs=int(doc.get("n_funcs", 20)),
                           alpha=float(doc.get("alpha", 2.0)), seed=derive_seed(seed, 0),
                           descriptor="centered GLM ball members")
    structure = {
        "B_X": glm_moment_bound(process),
        "constants": constants,
        "burn_in": report.to_dict(),
        "incremental_stability_ratio": incremental_stability_probe(process, seed=derive_seed(seed, 10)),
        "link_lipschitz": lip,
        "link_expansion": expansion,
        "hyper": hyper.to_dict(),
    }
    return [("json", "structure.json", structure)] + _dynamics_checks(process, doc, seed, constants["R"])


def cmd_diagnose(doc: dict, seed: int, threads: Optional[int]) -> list[Artifact]:
    """Структурные диагностики процесса (и покрытие, если задано семейство)"""
    process = process_from_dict(doc["process"])
    if process.kind == "finite_chain":
        artifacts = _diagnose_chain(process, doc, seed)
    elif process.kind == "lds":
        artifacts = _diagnose_lds(process, doc, seed)
    elif process.kind == "glm":
        artifacts = _diagnose_glm(process, doc, seed)
    else:
        raise ValidationError(f"Unknown process kind: {process.kind}")

    if "cover" in doc:
        artifacts.extend(_cover_artifacts(doc["cover"], seed))
    return artifacts


def cmd_experiment(doc: dict, seed: int, threads: Optional[int]) -> list[Artifact]:
    """Свип Монте-Карло: строки реплик, агрегаты, книга сидов"""
    cfg = SweepConfig.from_dict(doc, seed, threads=threads, n_eval=N_EVAL, opts=OPTIMIZER)
    result = run_experiment(cfg)
    stem = cfg.outputs[:-4] if cfg.outputs.endswith(".csv") else cfg.outputs

    artifacts = [
        ("csv", f"{stem}.csv", result_rows(result)),
        ("csv", f"{stem}.agg.csv", aggregate_rows(result)),
        ("json", f"{stem}.seeds.json", seed_ledger(cfg)),
        ("json", f"{stem}.summary.json", {"kind": cfg.kind, "summary": result.summary}),
    ]
    if cfg.kind == "parameter_recovery":
        artifacts.append(("csv", f"{stem}.recovery.csv", recovery_rows(result)))
    if result.bounds:
        artifacts.append(("csv", f"{stem}.bounds.csv", bound_rows(result)))
    return artifacts


COMMAND_HANDLERS: dict[str, Callable[[dict, int, Optional[int]], list[Artifact]]] = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "diagnose": cmd_diagnose,
    "experiment": cmd_experiment,
}


# ---------------------------------------------------------------------------
# Запуск
# ---------------------------------------------------------------------------

def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


async def run(cfg: RunConfig) -> int:
    """
    Выполнить команду и записать артефакты

    Returns:
        0: успех, 1: ошибка валидации, 2: численный сбой
    """
    try:
        if cfg.command not in COMMAND_HANDLERS:
            raise ValidationError(f"Unknown command: {cfg.command}")
        doc = load_config(cfg.config_path)
        is_valid, error = validate_run_config(doc, cfg.command)
        if not is_valid:
            raise ValidationError(error)

        seed = resolve_seed(cfg, doc)
        threads = cfg.threads or THREADS or None
        handler = COMMAND_HANDLERS[cfg.command]
        try:
            artifacts = await asyncio.to_thread(handler, doc, seed, threads)
        except LabError:
            raise
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"Linear algebra failure: {exc}") from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"Malformed {cfg.command} config: {exc!r}") from exc

        # запись только после успешного расчёта: при ошибке каталог не трогается
        store = ArtifactStore(cfg.out_dir)
        for kind, name, payload in artifacts:
            store.resolve(name)
        for kind, name, payload in artifacts:
            if kind == "csv":
                header, rows = payload
                await store.save_csv(name, header, rows)
            else:
                await store.save_json(name, _jsonable(payload))
        await store.save_manifest(cfg.command, doc, seed, VERSION)

    except ValidationError as e:
        logger.error(f"Validation error: {e}")
        return 1
    except NumericalError as e:
        logger.error(f"Numerical failure: {e}")
        return 2
    except LabError as e:
        logger.error(f"Run failed: {e}")
        return 2

    logger.info(f"{cfg.command} finished, {len(artifacts)} artifacts in {cfg.out_dir}")
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    """Точка входа командной строки"""
    try:
        cfg = build_run_config(sys.argv[1:] if argv is None else list(argv))
    except ValidationError as e:
        logger.error(f"Usage error: {e}")
        return 1
    return asyncio.run(run(cfg))


if __name__ == "__main__":
    sys.exit(main())
