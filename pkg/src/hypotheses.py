"""
Классы гипотез: линейный и GLM шары, конечные таблицы, эллипсоид в ℓ²(ℕ).
Вычисление членов семейства, построение и сертификация покрытий в sup-норме
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from errors import ValidationError
from processes import LinkFn, ProcessSpec
from utils import make_rng


logger = logging.getLogger(__name__)

ATOM_TOL = 1e-12
MEMBER_TOL = 1e-9
COVER_SLACK = 1e-9
DEFAULT_NET_CAP = 1_000_000


# ---------------------------------------------------------------------------
# Базис для эллипсоида
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CosineBasis:
    """Ортонормированная косинусная система на [0,1]: φ₁ ≡ 1, φ_j = √2 cos(π(j-1)x)"""

    bound: float = math.sqrt(2.0)
    growth: float = 0.0
    name: str = "cosine"

    def __call__(self, x, m: int) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        j = np.arange(m)
        out = math.sqrt(2.0) * np.cos(math.pi * np.outer(x, j))
        out[:, 0] = 1.0
        return out

    def to_dict(self) -> dict:
        return {"name": self.name}


BASES = {"cosine": CosineBasis}


# ---------------------------------------------------------------------------
# Семейства
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearBall:
    """{x ↦ Ax : ‖A‖_F ≤ B}, A размера d_y×d_x"""

    B: float
    dx: int
    dy: int

    kind = "linear_ball"

    def __post_init__(self):
        if not self.B > 0.0:
            raise ValidationError(f"Ball radius must be positive, got {self.B}")
        if self.dx < 1 or self.dy < 1:
            raise ValidationError(f"Dimensions must be positive, got dx={self.dx}, dy={self.dy}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.dy, self.dx)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "B": self.B, "d_x": self.dx, "d_y": self.dy}


@dataclass(frozen=True)
class GlmBall:
    """{x ↦ σ(Ax) : ‖A‖_F ≤ B}, A размера d_x×d_x"""

    B: float
    link: LinkFn
    dx: int

    kind = "glm_ball"

    def __post_init__(self):
        if not self.B > 0.0:
            raise ValidationError(f"Ball radius must be positive, got {self.B}")
        if self.dx < 1:
            raise ValidationError(f"Dimension must be positive, got dx={self.dx}")

    @property
    def dy(self) -> int:
        return self.dx

    @property
    def shape(self) -> tuple[int, int]:
        return (self.dx, self.dx)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "B": self.B, "link": self.link.to_dict(), "d_x": self.dx}


@dataclass(frozen=True, eq=False)
class FiniteTable:
    """Конечное семейство табличных функций: индекс состояния → вектор"""

    functions: np.ndarray
    atoms: np.ndarray

    kind = "finite_table"

    def __post_init__(self):
        tables = np.array(self.functions, dtype=float)
        if tables.ndim == 2:
            tables = tables[:, :, None]
        if tables.ndim != 3 or tables.shape[0] == 0:
            raise ValidationError(f"functions must be a non-empty list of tables, got shape {tables.shape}")
        atoms = np.array(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms.reshape(-1, 1)
        if atoms.shape[0] != tables.shape[1]:
            raise ValidationError(
                f"Tables cover {tables.shape[1]} states but {atoms.shape[0]} atoms were given"
            )
        tables.setflags(write=False)
        atoms.setflags(write=False)
        object.__setattr__(self, "functions", tables)
        object.__setattr__(self, "atoms", atoms)

    @property
    def size(self) -> int:
        return self.functions.shape[0]

    @property
    def dx(self) -> int:
        return self.atoms.shape[1]

    @property
    def dy(self) -> int:
        return self.functions.shape[2]

    def state_index(self, xs) -> np.ndarray:
        """Индексы атомов для состояний; не-атом: ошибка"""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        dist = np.linalg.norm(xs[:, None, :] - self.atoms[None, :, :], axis=2)
        idx = dist.argmin(axis=1)
        bad = dist[np.arange(len(xs)), idx] > ATOM_TOL
        if bad.any():
            raise ValidationError(f"State {xs[bad][0].tolist()} is not an atom of the table family")
        return idx

    def to_dict(self) -> dict:
        return {"kind": self.kind, "functions": self.functions.tolist(), "atoms": self.atoms.tolist()}


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    """
    {Σ_j θ_j φ_j : Σ_j θ_j²/μ_j ≤ 1} с μ_j ≤ e^{-2βj} и ‖φ_j‖_∞ ≤ B j^q

    Хранится конечный префикс μ; за его пределами используется огибающая e^{-2βj}.
    """

    beta: float
    B_basis: float
    q_growth: float
    mu: np.ndarray
    basis: CosineBasis = field(default_factory=CosineBasis)

    kind = "ellipsoid"

    def __post_init__(self):
        if not (self.beta > 0.0 and self.B_basis > 0.0 and self.q_growth >= 0.0):
            raise ValidationError(
                f"Ellipsoid needs beta>0, B>0, q>=0, got {self.beta}, {self.B_basis}, {self.q_growth}"
            )
        # огибающая B j^q не может быть меньше фактической нормы базиса
        if self.B_basis < self.basis.bound * (1.0 - 1e-12) or self.q_growth < self.basis.growth:
            raise ValidationError(
                f"Ellipsoid envelope B={self.B_basis}, q={self.q_growth} is below the {self.basis.name} "
                f"basis bound B={self.basis.bound:.6g}, q={self.basis.growth}"
            )
        mu = np.atleast_1d(np.array(self.mu, dtype=float))
        if mu.ndim != 1 or mu.size == 0 or np.any(mu <= 0.0):
            raise ValidationError("mu must be a non-empty vector of positive weights")
        envelope = np.exp(-2.0 * self.beta * np.arange(1, mu.size + 1))
        if np.any(mu > envelope * (1.0 + 1e-12)):
            raise ValidationError(f"mu_j must not exceed exp(-2*beta*j) for beta={self.beta}")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)

    @property
    def dx(self) -> int:
        return 1

    @property
    def dy(self) -> int:
        return 1

    def weights(self, m: int) -> np.ndarray:
        """μ_1..μ_m"""
        if m <= self.mu.size:
            return np.array(self.mu[:m])
        tail = np.exp(-2.0 * self.beta * np.arange(self.mu.size + 1, m + 1))
        return np.concatenate([self.mu, tail])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "beta": self.beta,
            "B_basis": self.B_basis,
            "q_growth": self.q_growth,
            "mu": self.mu.tolist(),
            "basis": self.basis.to_dict(),
        }


HypothesisSpec = Union[LinearBall, GlmBall, FiniteTable, Ellipsoid]


def family_to_dict(family: HypothesisSpec) -> dict:
    return family.to_dict()


def family_from_dict(data: dict) -> HypothesisSpec:
    """Восстановить семейство из JSON-документа"""
    if not isinstance(data, dict):
        raise ValidationError(f"Family must be a JSON object, got {type(data).__name__}")
    try:
        return _family_from_dict(data)
    except ValidationError:
        raise
    except KeyError as e:
        raise ValidationError(f"Family config is missing key {e}") from e
    except (TypeError, ValueError, AttributeError) as e:
        raise ValidationError(f"Malformed family config: {e}") from e


def _family_from_dict(data: dict) -> HypothesisSpec:
    kind = data.get("kind")

    if kind == "linear_ball":
        return LinearBall(B=float(data["B"]), dx=int(data["d_x"]), dy=int(data.get("d_y", data["d_x"])))
    elif kind == "glm_ball":
        return GlmBall(B=float(data["B"]), link=LinkFn.from_dict(data.get("link", {})), dx=int(data["d_x"]))
    elif kind == "finite_table":
        return FiniteTable(functions=data["functions"], atoms=data["atoms"])
    elif kind == "ellipsoid":
        basis_name = data.get("basis", {}).get("name", "cosine")
        if basis_name not in BASES:
            raise ValidationError(f"Unknown basis: {basis_name}")
        basis = BASES[basis_name]()
        return Ellipsoid(
            beta=float(data["beta"]),
            B_basis=float(data.get("B_basis", basis.bound)),
            q_growth=float(data.get("q_growth", basis.growth)),
            mu=data["mu"],
            basis=basis,
        )
    else:
        raise ValidationError(f"Unknown family kind: {kind}")


# ---------------------------------------------------------------------------
# Вычисление и принадлежность
# ---------------------------------------------------------------------------

def evaluate(family: HypothesisSpec, member, x, states: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Значение члена семейства f(x)

    Args:
        family: семейство
        member: матрица параметров / индекс таблицы / вектор коэффициентов
        x: одно состояние (d_x,) или пачка (n, d_x)
        states: готовые индексы атомов (для таблиц, минуя поиск)

    Returns:
        (d_y,) для одного состояния, (n, d_y) для пачки
    """
    x = np.asarray(x, dtype=float)
    if family.kind == "ellipsoid":
        single = x.ndim == 0
        xs = x.reshape(-1, 1)
    else:
        single = x.ndim == 1
        xs = np.atleast_2d(x)

    if family.kind == "linear_ball":
        out = xs @ np.asarray(member, dtype=float).reshape(family.shape).T
    elif family.kind == "glm_ball":
        out = family.link(xs @ np.asarray(member, dtype=float).reshape(family.shape).T)
    elif family.kind == "finite_table":
        idx = family.state_index(xs) if states is None else np.asarray(states)
        out = family.functions[int(member)][idx]
    elif family.kind == "ellipsoid":
        theta = np.asarray(member, dtype=float).reshape(-1)
        out = (family.basis(xs[:, 0], theta.size) @ theta)[:, None]
    else:
        raise ValidationError(f"Unknown family kind: {family.kind}")

    return out[0] if single else out


def parameter_norm(family: HypothesisSpec, member) -> float:
    """Норма параметра: Фробениус для шаров, √Σθ²/μ для эллипсоида"""
    if family.kind in ("linear_ball", "glm_ball"):
        return float(np.linalg.norm(np.asarray(member, dtype=float)))
    elif family.kind == "ellipsoid":
        theta = np.asarray(member, dtype=float).reshape(-1)
        return float(math.sqrt(np.sum(theta ** 2 / family.weights(theta.size))))
    elif family.kind == "finite_table":
        return 0.0
    else:
        raise ValidationError(f"Unknown family kind: {family.kind}")


def contains(family: HypothesisSpec, member, tol: float = MEMBER_TOL) -> bool:
    """Принадлежность параметра семейству"""
    if family.kind in ("linear_ball", "glm_ball"):
        arr = np.asarray(member, dtype=float)
        return arr.size == family.shape[0] * family.shape[1] and parameter_norm(family, arr) <= family.B + tol
    elif family.kind == "ellipsoid":
        return parameter_norm(family, member) <= 1.0 + tol
    elif family.kind == "finite_table":
        return 0 <= int(member) < family.size
    else:
        raise ValidationError(f"Unknown family kind: {family.kind}")


def scale_member(family: HypothesisSpec, member, gamma: float):
    """γf для звёздных семейств (шары, эллипсоид)"""
    if family.kind == "finite_table":
        raise ValidationError("Finite tables are not closed under scaling")
    return gamma * np.asarray(member, dtype=float)


def sample_member(family: HypothesisSpec, rng: np.random.Generator):
    """Случайный член семейства (равномерно по шару параметров)"""
    if family.kind in ("linear_ball", "glm_ball"):
        return family.B * _uniform_ball(rng, family.shape[0] * family.shape[1]).reshape(family.shape)
    elif family.kind == "ellipsoid":
        u = _uniform_ball(rng, family.mu.size)
        return np.sqrt(family.mu) * u
    elif family.kind == "finite_table":
        return int(rng.integers(family.size))
    else:
        raise ValidationError(f"Unknown family kind: {family.kind}")


def _uniform_ball(rng: np.random.Generator, dim: int) -> np.ndarray:
    direction = rng.standard_normal(dim)
    direction /= max(np.linalg.norm(direction), 1e-300)
    return direction * rng.random() ** (1.0 / dim)


def check_realizable(family: HypothesisSpec, process: ProcessSpec):
    """
    Проверка f⋆ ∈ F для пары (семейство, процесс)

    Returns:
        параметр истины в семействе (матрица или индекс таблицы)
    """
    if family.kind == "linear_ball" and process.kind == "lds":
        truth = np.array(process.A_star)
        if truth.shape != family.shape:
            raise ValidationError(f"Family shape {family.shape} does not match A_star {truth.shape}")
    elif family.kind == "glm_ball" and process.kind == "glm":
        truth = np.array(process.A_star)
        if truth.shape != family.shape:
            raise ValidationError(f"Family shape {family.shape} does not match A_star {truth.shape}")
        if family.link != process.link:
            raise ValidationError(f"Family link {family.link} differs from process link {process.link}")
    elif family.kind == "finite_table" and process.kind == "finite_chain":
        if family.atoms.shape != process.atoms.shape or np.abs(family.atoms - process.atoms).max() > ATOM_TOL:
            raise ValidationError("Table family atoms differ from chain atoms")
        if family.functions.shape[1:] != process.target_fn.shape:
            raise ValidationError("Table family output shape differs from target_fn")
        gaps = np.abs(family.functions - process.target_fn[None]).reshape(family.size, -1).max(axis=1)
        hits = np.flatnonzero(gaps <= ATOM_TOL)
        if hits.size == 0:
            raise ValidationError("Truth target_fn is not a member of the table family")
        return int(hits[0])
    else:
        raise ValidationError(f"Unsupported pairing: family {family.kind} with process {process.kind}")

    norm = float(np.linalg.norm(truth))
    if norm > family.B + 1e-12:
        raise ValidationError(f"Truth is outside the family: ||A_star||_F={norm:.6g} > B={family.B}")
    return truth


# ---------------------------------------------------------------------------
# Покрытия
# ---------------------------------------------------------------------------

@dataclass
class CoverCertificate:
    """ε-покрытие в sup-норме: элементы (или только оценка мощности)"""

    epsilon: float
    elements: Optional[np.ndarray]
    log_cardinality: float
    sup_norm_bound: float
    descriptor: str = ""
    notes: list[str] = field(default_factory=list)

    @property
    def realized_size(self) -> Optional[int]:
        return None if self.elements is None else len(self.elements)

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "log_cardinality": self.log_cardinality,
            "sup_norm_bound": self.sup_norm_bound,
            "realized_size": self.realized_size,
            "descriptor": self.descriptor,
            "notes": list(self.notes),
        }


def ball_grid(dim: int, radius: float, delta: float,
              cap: int = DEFAULT_NET_CAP) -> Optional[np.ndarray]:
    """
    δ-сеть евклидова шара радиуса radius в R^dim

    Центры клеток кубической решётки, пересекающих шар, радиально
    спроецированные на шар. None, если решётка больше cap.
    При dim=1, radius=1, delta=0.5 это 2 центра ±0.5, а не 5 точек {0, ±0.5, ±1}.
    """
    if delta >= radius:
        return np.zeros((1, dim))

    n = math.ceil(radius * math.sqrt(dim) / delta)
    if dim * math.log(n) > math.log(cap):
        return None

    width = 2.0 * radius / n
    axis = -radius + width * (np.arange(n) + 0.5)
    grid = np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), axis=-1).reshape(-1, dim)

    gap = np.maximum(np.abs(grid) - width / 2.0, 0.0)
    centers = grid[np.linalg.norm(gap, axis=1) <= radius]
    norms = np.linalg.norm(centers, axis=1)
    outside = norms > radius
    centers[outside] *= (radius / norms[outside])[:, None]
    return np.unique(np.round(centers, 12), axis=0)


def cover_linear(B: float, B_X: float, epsilon: float, dx: int, dy: int,
                 cap: int = DEFAULT_NET_CAP) -> CoverCertificate:
    """
    Объёмная ε-сеть линейного шара над ‖x‖ ≤ B_X

    Сетка с шагом δ = ε/B_X во фробениусовой норме; оценка
    log N ≤ d_x d_y log(1 + 2B·B_X/ε).
    """
    if not epsilon > 0.0 or not B_X > 0.0:
        raise ValidationError(f"epsilon and B_X must be positive, got {epsilon}, {B_X}")

    delta = epsilon / B_X
    log_bound = dx * dy * math.log(1.0 + 2.0 * B * B_X / epsilon)
    points = ball_grid(dx * dy, B, delta, cap)

    cert = CoverCertificate(
        epsilon=epsilon,
        elements=None if points is None else points.reshape(-1, dy, dx),
        log_cardinality=log_bound,
        sup_norm_bound=B * B_X,
        descriptor=f"linear_ball B={B} d_x={dx} d_y={dy} B_X={B_X}",
    )
    if points is None:
        cert.notes.append(f"net larger than cap {cap}; elements omitted")
        logger.info(f"Linear cover at eps={epsilon} exceeds cap {cap}, reporting log bound only")
    return cert


def cover_glm(family: GlmBall, B_X: float, epsilon: float,
              cap: int = DEFAULT_NET_CAP) -> CoverCertificate:
    """ε-сеть GLM шара: σ 1-липшицева, поэтому годится та же сетка параметров"""
    cert = cover_linear(family.B, B_X, epsilon, family.dx, family.dx, cap)
    cert.descriptor = f"glm_ball B={family.B} d_x={family.dx} link={family.link.tag} B_X={B_X}"
    return cert


def cover_finite(family: FiniteTable, epsilon: float) -> CoverCertificate:
    """Конечное семейство само является своим покрытием"""
    return CoverCertificate(
        epsilon=epsilon,
        elements=np.arange(family.size),
        log_cardinality=math.log(family.size),
        sup_norm_bound=float(np.linalg.norm(family.functions, axis=2).max()),
        descriptor=f"finite_table size={family.size}",
    )


def ellipsoid_m_eps(beta: float, B: float, q: float, epsilon: float) -> int:
    """Наименьшее целое m ≥ 1 с m - (q/β) log m ≥ |log(4B/(βε))|/β"""
    if not (beta > 0.0 and B > 0.0 and q >= 0.0 and epsilon > 0.0):
        raise ValidationError(f"Need beta, B, epsilon > 0 and q >= 0, got {beta}, {B}, {q}, {epsilon}")
    rhs = abs(math.log(4.0 * B / (beta * epsilon))) / beta
    m = 1
    while m - (q / beta) * math.log(m) < rhs:
        m += 1
    return m


def ellipsoid_tail_bound(B: float, q: float, beta: float, m: int) -> float:
    """Ошибка отбрасывания хвоста после m членов: B m^q e^{-βm} / β"""
    return B * m ** q * math.exp(-beta * m) / beta


def ellipsoid_cover(spec: Ellipsoid, epsilon: float, m: Optional[int] = None,
                    cap: int = DEFAULT_NET_CAP) -> CoverCertificate:
    """
    ε-покрытие эллипсоида: усечение до m_ε членов и δ-сеть Θ_m

    θ = √μ ⊙ u, u пробегает δ-сеть единичного шара, δ = ε/(4B m^q);
    log N ≤ m log(1 + 8B m^q / ε).

    Args:
        spec: эллипсоид
        epsilon: разрешение
        m: явная размерность усечения (по умолчанию m_ε)
        cap: предел размера сети
    """
    if not epsilon > 0.0:
        raise ValidationError(f"epsilon must be positive, got {epsilon}")

    B, q, beta = spec.B_basis, spec.q_growth, spec.beta
    m = m or ellipsoid_m_eps(beta, B, q, epsilon)
    if m < 1:
        raise ValidationError(f"Truncation dimension must be >= 1, got {m}")

    delta = epsilon / (4.0 * B * m ** q)
    log_bound = m * math.log(1.0 + 8.0 * B * m ** q / epsilon)
    tail = ellipsoid_tail_bound(B, q, beta, m)

    u = ball_grid(m, 1.0, delta, cap)
    cert = CoverCertificate(
        epsilon=epsilon,
        elements=None if u is None else u * np.sqrt(spec.weights(m)),
        log_cardinality=log_bound,
        sup_norm_bound=B,
        descriptor=f"ellipsoid beta={beta} B={B} q={q} m={m} delta={delta:.6g}",
    )
    if u is None:
        cert.notes.append(f"net larger than cap {cap}; elements omitted")
    if tail > epsilon / 4.0 + 1e-12:
        cert.notes.append(f"tail bound {tail:.6g} exceeds eps/4")
        logger.warning(f"Ellipsoid truncation m={m} leaves tail {tail:.6g} > eps/4={epsilon / 4:.6g}")
    return cert


def ellipsoid_hyper_constant(m_eps: int, K: float, B: float, q: float) -> float:
    """C_ε = 1 + 7K³B⁴m_ε^{4q+2}"""
    if m_eps < 1:
        raise ValidationError(f"m_eps must be >= 1, got {m_eps}")
    if K < 1.0:
        raise ValidationError(f"Density ratio bound K must be >= 1, got {K}")
    return 1.0 + 7.0 * K ** 3 * B ** 4 * m_eps ** (4.0 * q + 2.0)


def check_ellipsoid_precondition(epsilon: float, l2_norms) -> bool:
    """ε ≤ inf ‖f‖_{L²} по выборке членов сферы; иначе только предупреждение"""
    smallest = float(np.min(l2_norms))
    if epsilon > smallest:
        logger.warning(
            f"Ellipsoid cover resolution eps={epsilon:.6g} exceeds the smallest sampled L2 norm "
            f"{smallest:.6g}; hypercontractivity conclusion may not apply"
        )
        return False
    return True


def certify_cover(cert: CoverCertificate, family: HypothesisSpec, probes: list,
                  states: np.ndarray) -> tuple[bool, float]:
    """
    Проверка покрытия на пробах: у каждой пробы есть элемент в пределах ε
    по sup-норме на заданных состояниях

    Returns:
        (certified, worst_gap)
    """
    if cert.elements is None:
        raise ValidationError("Cover has no elements to certify (cardinality cap reached)")

    elements = list(cert.elements)
    for element in elements:
        if not contains(family, element, tol=1e-12):
            raise ValidationError("Cover element lies outside the family")

    states = np.asarray(states, dtype=float)
    centers = np.stack([evaluate(family, e, states) for e in elements])  # (n, S, d_y)
    worst = 0.0
    for probe in probes:
        values = evaluate(family, probe, states)
        gaps = np.linalg.norm(centers - values[None], axis=2).max(axis=1)
        worst = max(worst, float(gaps.min()))
    return worst <= cert.epsilon + COVER_SLACK, worst


def cover_rows(cert: CoverCertificate) -> tuple[list[str], list[list[float]]]:
    """CSV элементов покрытия для аудита: index, p_0..p_{n-1}"""
    if cert.elements is None:
        return ["index"], []
    flat = np.asarray(cert.elements, dtype=float).reshape(len(cert.elements), -1)
    header = ["index"] + [f"p_{i}" for i in range(flat.shape[1])]
    return header, [[i] + list(row) for i, row in enumerate(flat)]


def probe_members(family: HypothesisSpec, n: int, seed: int) -> list:
    """n случайных членов семейства (пробы для сертификации)"""
    rng = make_rng(seed)
    return [sample_member(family, rng) for _ in range(n)]
