"""
Процессы ковариат: конечные цепи Маркова, линейные динамические системы (LDS)
и GLM-динамика, их усечённые варианты и точные структурные величины
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import ClassVar, Optional, Union

import numpy as np
from scipy import linalg

from errors import NumericalError, ValidationError
from utils import make_rng


logger = logging.getLogger(__name__)

ROW_TOL = 1e-12
STATIONARY_TOL = 1e-10
LYAPUNOV_TOL = 1e-10
UNIT_EIGEN_TOL = 1e-9
CERTIFICATE_SLACK = 1e-12
LINK_TAGS = ("identity", "leaky_relu")


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be a matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} has non-finite entries")
    return arr


def _as_table(value, rows: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] != rows:
        raise ValidationError(f"{name} must have {rows} rows, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} has non-finite entries")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


def spectral_radius(A) -> float:
    """Спектральный радиус матрицы"""
    A = _as_matrix(A, "A")
    return float(np.max(np.abs(linalg.eigvals(A))))


# ---------------------------------------------------------------------------
# Функция связи
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinkFn:
    """Покоординатная функция связи σ: 1-липшицева, ζ-растягивающая, σ(0)=0"""

    tag: str = "identity"
    zeta: float = 1.0

    def __post_init__(self):
        if self.tag not in LINK_TAGS:
            raise ValidationError(f"Unknown link function: {self.tag}")
        if self.tag == "identity" and self.zeta != 1.0:
            raise ValidationError(f"Identity link forces zeta=1, got {self.zeta}")
        if not 0.0 < self.zeta <= 1.0:
            raise ValidationError(f"zeta must lie in (0, 1], got {self.zeta}")

    def __call__(self, z):
        if self.tag == "identity":
            return z
        return np.where(z >= 0.0, z, self.zeta * z)

    def derivative(self, z):
        """Производная (в нуле берётся правая)"""
        if self.tag == "identity":
            return np.ones_like(z)
        return np.where(z >= 0.0, 1.0, self.zeta)

    def to_dict(self) -> dict:
        return {"tag": self.tag, "zeta": self.zeta}

    @classmethod
    def from_dict(cls, data: dict) -> "LinkFn":
        return cls(tag=data.get("tag", "identity"), zeta=float(data.get("zeta", 1.0)))


def probe_link(link: LinkFn, n_pairs: int = 10_000, seed: int = 0,
               scale: float = 10.0) -> tuple[float, float]:
    """
    Эмпирические отношения |σ(x)-σ(y)| / |x-y| на случайных парах

    Returns:
        (min_ratio, max_ratio)
    """
    rng = make_rng(seed)
    x = rng.uniform(-scale, scale, size=n_pairs)
    y = rng.uniform(-scale, scale, size=n_pairs)
    keep = x != y
    ratios = np.abs(link(x[keep]) - link(y[keep])) / np.abs(x[keep] - y[keep])
    return float(ratios.min()), float(ratios.max())


def validate_link(link: LinkFn, n_pairs: int = 10_000, seed: int = 0):
    """Проверка липшицевости, растяжения и σ(0)=0 на сетке проб"""
    grid = np.linspace(-5.0, 5.0, 101)
    lo, hi = probe_link(link, n_pairs=n_pairs, seed=seed)
    diffs = np.abs(np.diff(link(grid))) / np.diff(grid)
    lo = min(lo, float(diffs.min()))
    hi = max(hi, float(diffs.max()))
    if float(np.abs(link(np.zeros(1)))[0]) != 0.0:
        raise ValidationError(f"Link {link.tag} does not satisfy sigma(0)=0")
    if hi > 1.0 + 1e-12:
        raise ValidationError(f"Link {link.tag} is not 1-Lipschitz (ratio {hi:.6g})")
    if lo < link.zeta - 1e-12:
        raise ValidationError(f"Link {link.tag} is not {link.zeta}-expansive (ratio {lo:.6g})")


# ---------------------------------------------------------------------------
# Спецификации процессов
# ---------------------------------------------------------------------------

def stationary_distribution(transition) -> np.ndarray:
    """
    Стационарное распределение π цепи: πP = π

    Собственное разложение Pᵀ; при плохом результате: степенной метод на
    ленивой цепи (P+I)/2. Неединственное π (приводимая цепь): ошибка.
    """
    P = _as_matrix(transition, "transition")
    eigvals, eigvecs = linalg.eig(P.T)
    unit = np.flatnonzero(np.abs(eigvals - 1.0) < UNIT_EIGEN_TOL)
    if unit.size != 1:
        raise ValidationError(
            f"Chain is reducible: eigenvalue 1 has multiplicity {unit.size}, "
            f"stationary distribution is not unique"
        )

    pi = np.real(eigvecs[:, unit[0]])
    pi = pi / pi.sum()
    if np.any(pi < -ROW_TOL) or np.abs(pi @ P - pi).max() > ROW_TOL:
        logger.warning("Eigen-solve for stationary distribution inaccurate, using power iteration")
        pi = _power_iteration(P)

    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def _power_iteration(P: np.ndarray, max_iter: int = 1_000_000) -> np.ndarray:
    lazy = 0.5 * (P + np.eye(P.shape[0]))
    mu = np.full(P.shape[0], 1.0 / P.shape[0])
    for _ in range(max_iter):
        nxt = mu @ lazy
        if np.abs(nxt - mu).sum() < ROW_TOL:
            return nxt
        mu = nxt
    raise NumericalError("Power iteration for stationary distribution did not converge")


@dataclass(frozen=True, eq=False)
class FiniteChainSpec:
    """Конечная цепь Маркова на атомах с табличной целевой функцией"""

    transition: np.ndarray
    atoms: np.ndarray
    init: Union[np.ndarray, str]
    target_fn: np.ndarray
    noise_std: float = 0.0
    init_probs: np.ndarray = field(init=False, repr=False)

    kind: ClassVar[str] = "finite_chain"

    def __post_init__(self):
        P = _as_matrix(self.transition, "transition")
        K = P.shape[0]
        if P.shape != (K, K):
            raise ValidationError(f"transition must be square, got shape {P.shape}")
        if np.any(P < 0.0):
            raise ValidationError("transition has negative entries")
        row_err = np.abs(P.sum(axis=1) - 1.0).max()
        if row_err > ROW_TOL:
            raise ValidationError(f"transition rows must sum to 1 (max error {row_err:.3g})")

        atoms = _as_table(self.atoms, K, "atoms")
        target = _as_table(self.target_fn, K, "target_fn")
        if self.noise_std < 0.0:
            raise ValidationError(f"noise_std must be non-negative, got {self.noise_std}")

        if isinstance(self.init, str):
            if self.init != "stationary":
                raise ValidationError(f"Unknown init: {self.init}")
            probs = stationary_distribution(P)
            if np.abs(probs @ P - probs).max() > STATIONARY_TOL:
                raise NumericalError("Stationary vector does not satisfy pi P = pi")
            init = "stationary"
        else:
            probs = np.asarray(self.init, dtype=float).reshape(-1)
            if probs.shape != (K,):
                raise ValidationError(f"init must have {K} entries, got {probs.shape}")
            if np.any(probs < 0.0) or abs(probs.sum() - 1.0) > ROW_TOL:
                raise ValidationError("init must be a probability vector")
            init = _frozen(probs)

        object.__setattr__(self, "transition", _frozen(P))
        object.__setattr__(self, "atoms", _frozen(atoms))
        object.__setattr__(self, "target_fn", _frozen(target))
        object.__setattr__(self, "init", init)
        object.__setattr__(self, "init_probs", _frozen(probs))
        object.__setattr__(self, "noise_std", float(self.noise_std))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def dx(self) -> int:
        return self.atoms.shape[1]

    @property
    def dy(self) -> int:
        return self.target_fn.shape[1]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "transition": self.transition.tolist(),
            "atoms": self.atoms.tolist(),
            "init": self.init if isinstance(self.init, str) else self.init.tolist(),
            "target_fn": self.target_fn.tolist(),
            "noise_std": self.noise_std,
        }


@dataclass(frozen=True, eq=False)
class LdsSpec:
    """LDS: X_{t+1} = A⋆X_t + HV_t, X_0 = HV_0, Y_t = X_{t+1}"""

    A_star: np.ndarray
    H: np.ndarray
    trunc_radius: Optional[float] = None

    kind: ClassVar[str] = "lds"

    def __post_init__(self):
        A = _as_matrix(self.A_star, "A_star")
        H = _as_matrix(self.H, "H")
        if A.shape[0] != A.shape[1]:
            raise ValidationError(f"A_star must be square, got shape {A.shape}")
        if H.shape[0] != A.shape[0]:
            raise ValidationError(f"H must have {A.shape[0]} rows, got shape {H.shape}")
        radius = spectral_radius(A)
        if radius >= 1.0:
            raise ValidationError(
                f"A_star has spectral radius {radius:.6g} >= 1; "
                f"marginally stable and unstable systems are not supported"
            )
        _check_radius(self.trunc_radius)
        object.__setattr__(self, "A_star", _frozen(A))
        object.__setattr__(self, "H", _frozen(H))

    @property
    def dx(self) -> int:
        return self.A_star.shape[0]

    @property
    def dy(self) -> int:
        return self.A_star.shape[0]

    @property
    def dv(self) -> int:
        return self.H.shape[1]

    def f_star(self, xs: np.ndarray) -> np.ndarray:
        return np.asarray(xs, dtype=float) @ self.A_star.T

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "A_star": self.A_star.tolist(),
            "H": self.H.tolist(),
            "trunc_radius": self.trunc_radius,
        }


@dataclass(frozen=True, eq=False)
class GlmSpec:
    """GLM-динамика: X_{t+1} = σ(A⋆X_t) + HV_t с сертификатом Ляпунова (P⋆, ρ)"""

    A_star: np.ndarray
    H: np.ndarray
    link: LinkFn
    P_star: np.ndarray
    rho: float
    trunc_radius: Optional[float] = None

    kind: ClassVar[str] = "glm"

    def __post_init__(self):
        A = _as_matrix(self.A_star, "A_star")
        H = _as_matrix(self.H, "H")
        d = A.shape[0]
        if A.shape != (d, d) or H.shape != (d, d):
            raise ValidationError(f"A_star and H must be square {d}x{d}, got {A.shape} and {H.shape}")

        P = np.asarray(self.P_star, dtype=float)
        if P.ndim <= 1:
            P = np.diag(np.atleast_1d(P))
        if P.shape != (d, d) or np.any(P - np.diag(np.diag(P)) != 0.0):
            raise ValidationError("P_star must be a diagonal matrix")
        if np.any(np.diag(P) < 1.0 - 1e-12):
            raise ValidationError("P_star must satisfy P_star >= I")

        if not 0.0 < self.rho < 1.0:
            raise ValidationError(f"rho must lie in (0, 1), got {self.rho}")

        sigma_min = float(linalg.svdvals(H).min())
        if sigma_min <= 0.0:
            raise ValidationError("H must be full rank (sigma_min(H) = 0)")

        gap = float(linalg.eigvalsh(A.T @ P @ A - self.rho * P).max())
        if gap > LYAPUNOV_TOL:
            raise ValidationError(
                f"Lyapunov condition A^T P A <= rho P violated by {gap:.3g}"
            )

        if not isinstance(self.link, LinkFn):
            raise ValidationError("link must be a LinkFn")
        validate_link(self.link)
        _check_radius(self.trunc_radius)

        object.__setattr__(self, "A_star", _frozen(A))
        object.__setattr__(self, "H", _frozen(H))
        object.__setattr__(self, "P_star", _frozen(P))
        object.__setattr__(self, "rho", float(self.rho))

    @property
    def dx(self) -> int:
        return self.A_star.shape[0]

    @property
    def dy(self) -> int:
        return self.A_star.shape[0]

    @property
    def dv(self) -> int:
        return self.H.shape[1]

    def f_star(self, xs: np.ndarray) -> np.ndarray:
        return self.link(np.asarray(xs, dtype=float) @ self.A_star.T)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "A_star": self.A_star.tolist(),
            "H": self.H.tolist(),
            "link": self.link.to_dict(),
            "P_star": np.diag(self.P_star).tolist(),
            "rho": self.rho,
            "trunc_radius": self.trunc_radius,
        }


ProcessSpec = Union[FiniteChainSpec, LdsSpec, GlmSpec]


def _check_radius(radius):
    if radius is not None and not radius > 0.0:
        raise ValidationError(f"trunc_radius must be positive, got {radius}")


def process_to_dict(spec: ProcessSpec) -> dict:
    return spec.to_dict()


def process_from_dict(data: dict) -> ProcessSpec:
    """Восстановить спецификацию процесса из JSON-документа"""
    if not isinstance(data, dict):
        raise ValidationError(f"Process must be a JSON object, got {type(data).__name__}")
    try:
        return _process_from_dict(data)
    except ValidationError:
        raise
    except KeyError as e:
        raise ValidationError(f"Process config is missing key {e}") from e
    except (TypeError, ValueError, AttributeError) as e:
        raise ValidationError(f"Malformed process config: {e}") from e


def _process_from_dict(data: dict) -> ProcessSpec:
    kind = data.get("kind")

    if kind == "finite_chain":
        init = data.get("init", "stationary")
        return FiniteChainSpec(
            transition=data["transition"],
            atoms=data["atoms"],
            init=init,
            target_fn=data["target_fn"],
            noise_std=float(data.get("noise_std", 0.0)),
        )
    elif kind == "lds":
        return LdsSpec(
            A_star=data["A_star"],
            H=data["H"],
            trunc_radius=data.get("trunc_radius"),
        )
    elif kind == "glm":
        return GlmSpec(
            A_star=data["A_star"],
            H=data["H"],
            link=LinkFn.from_dict(data.get("link", {})),
            P_star=data.get("P_star", [1.0] * len(data["A_star"])),
            rho=float(data["rho"]),
            trunc_radius=data.get("trunc_radius"),
        )
    else:
        raise ValidationError(f"Unknown process kind: {kind}")


def with_truncation(spec: ProcessSpec, radius: Optional[float]) -> ProcessSpec:
    """Копия спецификации динамики с другим радиусом усечения шума"""
    if spec.kind == "finite_chain":
        raise ValidationError("Noise truncation applies to LDS and GLM processes only")
    return replace(spec, trunc_radius=radius)


def truncation_radius(d: int, T: int, beta: float = 4.0) -> float:
    """R = √d + √(2(1+β) log T)"""
    return math.sqrt(d) + math.sqrt(2.0 * (1.0 + beta) * math.log(max(T, 1)))


def coupling_radius(d: int, T: int, delta: float) -> float:
    """R = √d + √(2 log(T/δ)): усечённый и исходный процессы совпадают с вероятностью ≥ 1-δ"""
    if not 0.0 < delta < 1.0:
        raise ValidationError(f"delta must lie in (0, 1), got {delta}")
    return math.sqrt(d) + math.sqrt(2.0 * math.log(T / delta))


# ---------------------------------------------------------------------------
# Траектории
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """Одна реализованная траектория {(X_t, Y_t)} с записью шума и сидом"""

    xs: np.ndarray
    ys: np.ndarray
    noise: np.ndarray
    seed: int
    truncated_flag: bool = False
    states: Optional[np.ndarray] = None
    kind: str = "finite_chain"

    def __post_init__(self):
        if not len(self.xs) == len(self.ys) == len(self.noise):
            raise ValidationError(
                f"Trajectory lengths differ: xs={len(self.xs)}, ys={len(self.ys)}, noise={len(self.noise)}"
            )
        if len(self.xs) == 0:
            raise ValidationError("Trajectory is empty")

    @property
    def T(self) -> int:
        return len(self.xs)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "T": self.T,
            "truncated_flag": self.truncated_flag,
            "xs": self.xs.tolist(),
            "ys": self.ys.tolist(),
            "noise": self.noise.tolist(),
        }


def trajectory_rows(batch: TrajectoryBatch) -> tuple[list[str], list[list[float]]]:
    """Заголовок и строки CSV: t, x_0..x_{d-1}, y_0..y_{d-1}"""
    header = (
        ["t"]
        + [f"x_{i}" for i in range(batch.xs.shape[1])]
        + [f"y_{i}" for i in range(batch.ys.shape[1])]
    )
    rows = [
        [t] + list(batch.xs[t]) + list(batch.ys[t])
        for t in range(batch.T)
    ]
    return header, rows


def simulate_chain_paths(spec: FiniteChainSpec, T: int, n: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Векторная симуляция n путей состояний длины T, форма (n, T)"""
    return chain_paths_from_uniforms(spec, rng.random((n, T)))


def chain_paths_from_uniforms(spec: FiniteChainSpec, u: np.ndarray) -> np.ndarray:
    """Пути состояний по равномерным U(0,1) формы (n, T) методом обратной функции распределения"""
    n, T = u.shape
    cdf = np.cumsum(spec.transition, axis=1)
    cdf[:, -1] = 1.0
    init_cdf = np.cumsum(spec.init_probs)
    init_cdf[-1] = 1.0

    paths = np.empty((n, T), dtype=np.int64)
    paths[:, 0] = np.searchsorted(init_cdf, u[:, 0], side="right")
    for t in range(1, T):
        paths[:, t] = (u[:, t, None] >= cdf[paths[:, t - 1]]).sum(axis=1)
    return paths


def simulate_finite_chain(spec: FiniteChainSpec, T: int, seed: int) -> TrajectoryBatch:
    """Траектория цепи: X_t: атомы, Y_t = f⋆(X_t) + W_t, W_t ~ N(0, σ_W² I)"""
    if T < 1:
        raise ValidationError(f"T must be a positive integer, got {T}")
    rng = make_rng(seed)
    states = simulate_chain_paths(spec, T, 1, rng)[0]
    noise = spec.noise_std * rng.standard_normal((T, spec.dy))
    xs = spec.atoms[states].copy()
    ys = spec.target_fn[states] + noise
    return TrajectoryBatch(xs=xs, ys=ys, noise=noise, seed=seed,
                           truncated_flag=False, states=states, kind=spec.kind)


def _simulate_dynamics(A: np.ndarray, H: np.ndarray, link: Optional[LinkFn],
                       radius: Optional[float], T: int, seed: int, kind: str) -> TrajectoryBatch:
    if T < 1:
        raise ValidationError(f"T must be a positive integer, got {T}")
    rng = make_rng(seed)
    v = rng.standard_normal((T + 1, H.shape[1]))

    truncated = False
    if radius is not None:
        hit = np.linalg.norm(v, axis=1) > radius
        truncated = bool(hit.any())
        v[hit] = 0.0

    drive = v @ H.T
    states = np.empty((T + 1, A.shape[0]))
    states[0] = drive[0]
    for t in range(T):
        z = A @ states[t]
        if link is not None:
            z = link(z)
        states[t + 1] = z + drive[t + 1]

    return TrajectoryBatch(xs=states[:T].copy(), ys=states[1:].copy(), noise=drive[1:].copy(),
                           seed=seed, truncated_flag=truncated, kind=kind)


def simulate_lds(spec: LdsSpec, T: int, seed: int) -> TrajectoryBatch:
    """Траектория LDS (при trunc_radius шум V_t заменяется на V_t·1{‖V_t‖ ≤ R})"""
    return _simulate_dynamics(spec.A_star, spec.H, None, spec.trunc_radius, T, seed, spec.kind)


def simulate_glm(spec: GlmSpec, T: int, seed: int) -> TrajectoryBatch:
    """Траектория GLM-динамики; тот же поток шума, что и у simulate_lds"""
    return _simulate_dynamics(spec.A_star, spec.H, spec.link, spec.trunc_radius, T, seed, spec.kind)


def simulate(spec: ProcessSpec, T: int, seed: int) -> TrajectoryBatch:
    """Диспетчер симуляции по типу процесса"""
    if spec.kind == "finite_chain":
        return simulate_finite_chain(spec, T, seed)
    elif spec.kind == "lds":
        return simulate_lds(spec, T, seed)
    elif spec.kind == "glm":
        return simulate_glm(spec, T, seed)
    else:
        raise ValidationError(f"Unknown process kind: {spec.kind}")


def simulate_ensemble(spec: ProcessSpec, T: int, seeds) -> tuple[np.ndarray, np.ndarray]:
    """
    Пачка независимых траекторий, шаг по времени векторизован по траекториям

    i-я траектория использует тот же поток случайности, что simulate(spec, T, seeds[i]).

    Returns:
        (xs, ys) формы (n, T, d_x) и (n, T, d_y)
    """
    if T < 1:
        raise ValidationError(f"T must be a positive integer, got {T}")
    n = len(seeds)

    if spec.kind == "finite_chain":
        u = np.empty((n, T))
        noise = np.empty((n, T, spec.dy))
        for i, seed in enumerate(seeds):
            rng = make_rng(seed)
            u[i] = rng.random((1, T))[0]
            noise[i] = spec.noise_std * rng.standard_normal((T, spec.dy))
        states = chain_paths_from_uniforms(spec, u)
        return spec.atoms[states], spec.target_fn[states] + noise

    if spec.kind not in ("lds", "glm"):
        raise ValidationError(f"Unknown process kind: {spec.kind}")

    A, H = spec.A_star, spec.H
    link = spec.link if spec.kind == "glm" else None
    v = np.stack([make_rng(seed).standard_normal((T + 1, H.shape[1])) for seed in seeds])
    if spec.trunc_radius is not None:
        v[np.linalg.norm(v, axis=2) > spec.trunc_radius] = 0.0

    drive = v @ H.T
    states = np.empty((n, T + 1, A.shape[0]))
    states[:, 0] = drive[:, 0]
    for t in range(T):
        z = states[:, t] @ A.T
        if link is not None:
            z = link(z)
        states[:, t + 1] = z + drive[:, t + 1]
    return states[:, :T], states[:, 1:]


# ---------------------------------------------------------------------------
# Структурные величины
# ---------------------------------------------------------------------------

def controllability_gramian(A, H, t: int) -> np.ndarray:
    """Γ_t = Σ_{k=0}^t A^k HHᵀ (A^k)ᵀ"""
    A = _as_matrix(A, "A")
    H = _as_matrix(H, "H")
    if t < 0:
        raise ValidationError(f"t must be non-negative, got {t}")
    gram = np.zeros((A.shape[0], A.shape[0]))
    power = np.eye(A.shape[0])
    for _ in range(t + 1):
        block = power @ H
        gram += block @ block.T
        power = A @ power
    return gram


def gramian_sequence(A, H, T: int) -> np.ndarray:
    """Γ_0, …, Γ_{T-1} рекурсией Γ_t = AΓ_{t-1}Aᵀ + HHᵀ, форма (T, d, d)"""
    A = _as_matrix(A, "A")
    H = _as_matrix(H, "H")
    base = H @ H.T
    out = np.empty((T, A.shape[0], A.shape[0]))
    gram = base.copy()
    for t in range(T):
        out[t] = gram
        gram = A @ gram @ A.T + base
    return out


def average_gramian(A, H, T: int) -> np.ndarray:
    """Средняя ковариация Γ̄_T = (1/T) Σ_{t<T} Γ_t"""
    A = _as_matrix(A, "A")
    H = _as_matrix(H, "H")
    base = H @ H.T
    gram = base.copy()
    total = np.zeros_like(base)
    for _ in range(T):
        total += gram
        gram = A @ gram @ A.T + base
    return total / T


def stationary_covariance(A, H) -> np.ndarray:
    """Стационарная ковариация: решение AΣAᵀ - Σ + HHᵀ = 0"""
    A = _as_matrix(A, "A")
    H = _as_matrix(H, "H")
    return linalg.solve_discrete_lyapunov(A, H @ H.T)


def controllability_matrix(A, H, k: int) -> np.ndarray:
    """[H, AH, …, A^{k-1}H]"""
    A = _as_matrix(A, "A")
    H = _as_matrix(H, "H")
    blocks = []
    block = H
    for _ in range(k):
        blocks.append(block)
        block = A @ block
    return np.hstack(blocks)


def controllability_index(A, H) -> Optional[int]:
    """Наименьшее κ, при котором пара (A, H) κ-шагово управляема (None, если нет)"""
    A = _as_matrix(A, "A")
    d = A.shape[0]
    for k in range(1, d + 1):
        if np.linalg.matrix_rank(controllability_matrix(A, H, k)) == d:
            return k
    return None


def stability_certificate(A, rho: float, k_cap: int = 10_000) -> float:
    """
    τ ≥ 1 такое, что ‖A^k‖ ≤ τρ^k для всех k

    Перебирает S = A/ρ до первого k ≥ 1 с ‖S^k‖ ≤ 1: тогда все следующие
    степени ограничены максимумом уже просмотренных.

    Args:
        A: матрица динамики
        rho: скорость, не меньше спектрального радиуса A
        k_cap: жёсткий предел числа степеней
    """
    A = _as_matrix(A, "A")
    if not 0.0 < rho < 1.0:
        raise ValidationError(f"rho must lie in (0, 1), got {rho}")
    radius = spectral_radius(A)
    if rho < radius - CERTIFICATE_SLACK:
        raise ValidationError(f"rho={rho} is below the spectral radius {radius:.6g}")

    scaled = A / rho
    power = np.eye(A.shape[0])
    tau = 1.0
    for k in range(1, k_cap + 1):
        power = power @ scaled
        ratio = float(linalg.norm(power, 2))
        if ratio <= 1.0 + CERTIFICATE_SLACK:
            logger.debug(f"Stability certificate tau={tau:.6g} found at k={k}")
            return tau
        tau = max(tau, ratio)

    raise NumericalError(f"No stability certificate within {k_cap} powers for rho={rho}")


def propagated_marginals(spec: FiniteChainSpec, T: int) -> np.ndarray:
    """Маргиналы μ_t, t = 0..T-1, через μ_{t+1} = μ_t P; форма (T, K)"""
    if T < 1:
        raise ValidationError(f"T must be a positive integer, got {T}")
    out = np.empty((T, spec.n_states))
    mu = np.array(spec.init_probs)
    for t in range(T):
        out[t] = mu
        mu = mu @ spec.transition
    return out


# ---------------------------------------------------------------------------
# Константы GLM
# ---------------------------------------------------------------------------

def glm_moment_bound(spec: GlmSpec) -> float:
    """B_X = 12√2 ‖H‖ ‖P⋆‖^{1/2} √d / (1-ρ): sup_t E‖X_t‖⁴ ≤ B_X⁴"""
    h_norm = float(linalg.norm(spec.H, 2))
    p_norm = float(np.max(np.diag(spec.P_star)))
    return 12.0 * math.sqrt(2.0) * h_norm * math.sqrt(p_norm) * math.sqrt(spec.dx) / (1.0 - spec.rho)


def glm_state_bound(spec: GlmSpec, radius: float) -> float:
    """B_X̄ = 2‖P⋆‖^{1/2} ‖H‖ R / (1-ρ): почти наверное ‖X̄_t‖_{P⋆} ≤ B_X̄"""
    h_norm = float(linalg.norm(spec.H, 2))
    p_norm = float(np.max(np.diag(spec.P_star)))
    return 2.0 * math.sqrt(p_norm) * h_norm * radius / (1.0 - spec.rho)


def glm_hyper_constant(spec: GlmSpec, radius: float) -> float:
    """C_GLM = 4 B_X̄⁴ / (σ_min(H)⁴ ζ⁴)"""
    sigma_min = float(linalg.svdvals(spec.H).min())
    b_bar = glm_state_bound(spec, radius)
    return 4.0 * b_bar ** 4 / (sigma_min ** 4 * spec.link.zeta ** 4)


def incremental_stability_probe(spec: GlmSpec, n: int = 10_000, seed: int = 0,
                                scale: float = 10.0) -> float:
    """max ‖σ(A⋆x)-σ(A⋆x′)‖²_P / (ρ‖x-x′‖²_P) по случайным парам (ожидается ≤ 1)"""
    rng = make_rng(seed)
    x = rng.uniform(-scale, scale, size=(n, spec.dx))
    y = rng.uniform(-scale, scale, size=(n, spec.dx))
    weights = np.diag(spec.P_star)
    lhs = ((spec.f_star(x) - spec.f_star(y)) ** 2 * weights).sum(axis=1)
    rhs = spec.rho * ((x - y) ** 2 * weights).sum(axis=1)
    return float(np.max(lhs / rhs))
