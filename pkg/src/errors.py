"""
Исключения лаборатории
"""


class LabError(Exception):
    """Базовая ошибка лаборатории"""


class ValidationError(LabError, ValueError):
    """Неверная спецификация, конфиг или нарушенное предусловие (код выхода 1)"""


class NumericalError(LabError, ArithmeticError):
    """Численный сбой: переполнение, не сошедшийся сертификат (код выхода 2)"""
