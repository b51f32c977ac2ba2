#!/usr/bin/env python3
"""
Mixing Lab Starter
Запуск лаборатории обучения на зависимых данных

Пример:
    python starter.py diagnose --config data/configs/diagnose_two_state.json --out data/runs/two_state
"""

import sys
import os

# Добавляем src в путь для импорта
current_dir = os.path.dirname(os.path.abspath(__file__))
src_path = os.path.join(current_dir, 'src')
sys.path.insert(0, current_dir)
sys.path.insert(0, src_path)


def check_requirements():
    """Проверка установленных зависимостей"""
    required = {
        'numpy': 'numpy>=1.26',
        'scipy': 'scipy>=1.12',
        'aiofiles': 'aiofiles>=23.2.1'
    }

    missing = []
    for module, package in required.items():
        try:
            __import__(module)
        except ImportError:
            missing.append(package)

    if missing:
        print("❌ Отсутствуют необходимые модули!")
        print("\nУстановите их командой:")
        print(f"pip install {' '.join(missing)}")
        return False

    return True


def check_config():
    """Проверка конфигурации"""
    import configparser

    config_path = os.path.join(current_dir, 'config.cfg')

    if not os.path.exists(config_path):
        print("❌ Файл config.cfg не найден!")
        print("\nСкопируйте config.cfg из репозитория в корень проекта")
        return False

    config = configparser.ConfigParser()
    try:
        config.read(config_path)
        threads = config.getint('SETTINGS', 'THREADS', fallback=0)
        config.getint('SETTINGS', 'N_EVAL', fallback=200)
        config.getfloat('SETTINGS', 'TRUNCATION_BETA', fallback=4.0)
        config.getfloat('OPTIMIZER', 'GRAD_TOL', fallback=1e-8)
    except (configparser.Error, ValueError) as e:
        print(f"❌ Ошибка в config.cfg: {e}")
        return False

    if threads < 0:
        print("❌ THREADS в config.cfg должен быть неотрицательным!")
        return False

    return True


if __name__ == "__main__":
    # Проверяем зависимости
    if not check_requirements():
        sys.exit(1)

    # Проверяем конфигурацию
    if not check_config():
        sys.exit(1)

    try:
        # Импортируем main только после проверок
        from main import main
        sys.exit(main(sys.argv[1:]))
    except KeyboardInterrupt:
        print("\n\n🛑 Остановлено пользователем")
        sys.exit(1)
