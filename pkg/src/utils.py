"""
Вспомогательные утилиты лаборатории: сиды, форматирование, проверка конфигов
"""

import math
from typing import Optional, Sequence

import numpy as np


SEED_RULE = "seedseq-philox-v1"
SEED_MASK = (1 << 64) - 1

COMMANDS = ("simulate", "fit", "diagnose", "experiment")

# Обязательные ключи JSON-конфига для каждой команды
REQUIRED_KEYS = {
    "simulate": ("process", "T"),
    "fit": ("process", "family", "T"),
    "diagnose": ("process", "T"),
    "experiment": ("kind", "process", "family", "T_grid", "n_rep"),
}


def derive_seed(master_seed: int, *counters: int) -> int:
    """
    Сид реплики по счётчику: (мастер-сид, индексы) -> 64-битное число

    Не зависит от порядка вызовов и числа потоков.
    """
    words = [int(master_seed) & SEED_MASK] + [int(c) for c in counters]
    seq = np.random.SeedSequence(words)
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int) -> np.random.Generator:
    """Генератор на счётчиковом движке Philox"""
    return np.random.Generator(np.random.Philox(int(seed) & SEED_MASK))


def entropy_seed() -> int:
    """Мастер-сид из энтропии ОС (записывается в манифест)"""
    return int(np.random.SeedSequence().entropy) & SEED_MASK


def format_float(value: float) -> str:
    """Форматирование числа для CSV без потери точности"""
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return format(value, ".17g")


def standard_error(values: Sequence[float]) -> float:
    """Стандартная ошибка среднего: sd / sqrt(n)"""
    arr = np.asarray(values, dtype=float)
    if arr.size < 2:
        return 0.0
    return float(arr.std(ddof=1) / math.sqrt(arr.size))


def validate_run_config(doc: dict, command: str) -> tuple[bool, Optional[str]]:
    """
    Валидация JSON-конфига под команду

    Returns:
        (is_valid, error_message)
    """
    if command not in COMMANDS:
        return False, f"Unknown command: {command}"

    if not isinstance(doc, dict):
        return False, "Config must be a JSON object"

    missing = [key for key in REQUIRED_KEYS[command] if key not in doc]
    if missing:
        return False, f"Config for '{command}' is missing keys: {', '.join(missing)}"

    key = "n_rep" if command == "experiment" else "T"
    try:
        value = int(doc[key])
    except (TypeError, ValueError):
        return False, f"{key} must be an integer, got {doc[key]!r}"

    if command == "experiment":
        if not isinstance(doc.get("T_grid"), list) or not doc["T_grid"]:
            return False, "T_grid must be a non-empty list"
        if value < 2:
            return False, f"n_rep must be at least 2, got {value}"
    elif value < 1:
        return False, f"T must be a positive integer, got {value}"

    return True, None
