"""
Общие фикстуры тестов: цепи на двух состояниях, скалярная LDS, GLM с leaky_relu
"""
import os
import sys

import numpy as np
import pytest

# Добавляем src в путь для импорта (как starter.py)
ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(ROOT, 'src'))

from processes import FiniteChainSpec, GlmSpec, LdsSpec, LinkFn  # noqa: E402


def symmetric_chain(p: float, init="stationary", noise_std: float = 0.0) -> FiniteChainSpec:
    """Цепь на {0, 1} с вероятностью смены состояния p и f⋆(x) = x"""
    return FiniteChainSpec(
        transition=[[1.0 - p, p], [p, 1.0 - p]],
        atoms=[[0.0], [1.0]],
        init=init,
        target_fn=[[0.0], [1.0]],
        noise_std=noise_std,
    )


@pytest.fixture
def chain_factory():
    return symmetric_chain


@pytest.fixture
def two_state_chain():
    """Стационарная цепь с p = 0.25: Γ_{i,i+k} = 0.5^{k/2}"""
    return symmetric_chain(0.25, noise_std=0.5)


@pytest.fixture
def lazy_three_state():
    return FiniteChainSpec(
        transition=[[0.8, 0.15, 0.05], [0.1, 0.85, 0.05], [0.2, 0.1, 0.7]],
        atoms=[[0.0], [1.0], [2.0]],
        init=[1.0, 0.0, 0.0],
        target_fn=[[1.0], [-1.0], [0.5]],
        noise_std=1.0,
    )


@pytest.fixture
def scalar_lds():
    return LdsSpec(A_star=[[0.5]], H=[[1.0]])


@pytest.fixture
def planar_lds():
    return LdsSpec(A_star=[[0.9, 0.2], [0.0, 0.5]], H=[[1.0, 0.0], [0.0, 1.0]])


@pytest.fixture
def leaky_glm():
    return GlmSpec(
        A_star=[[0.5]],
        H=[[1.0]],
        link=LinkFn("leaky_relu", 0.5),
        P_star=[1.0],
        rho=0.3,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
