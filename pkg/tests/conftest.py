import os
import sys

import numpy as np
import pytest

# Add the project root to Python path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from frechet.graded_space import FrechetMetric, GradedSpace, GradingConfig, SeminormBlock, SeminormFamily
from frechet.operators import GradedOperator
from frechet.witnesses import (
    build_normed_model,
    build_scalar_model,
    build_sequence_model,
    build_trig_model,
    derivative_operator,
)


@pytest.fixture(scope='session')
def seq4():
    """Sequence model D=4 with ||v||_n = max_k (k+1)^n |v_k|, levels 0..4."""
    return build_sequence_model(4)


@pytest.fixture(scope='session')
def trig16():
    return build_trig_model(16, 8, 64)


@pytest.fixture(scope='session')
def trig64():
    return build_trig_model(64, 8)


@pytest.fixture(scope='session')
def scalar_line():
    return build_scalar_model('sum_form')


@pytest.fixture(scope='session')
def sqrt_line():
    return build_scalar_model('sqrt_scalar')


@pytest.fixture(scope='session')
def euclid3():
    return build_normed_model(3, 'euclidean')


@pytest.fixture(scope='session')
def d16(trig16):
    return derivative_operator(trig16)


@pytest.fixture(scope='session')
def weights4(seq4):
    return GradedOperator(np.diag([1.0, 0.5, 0.25, 0.125]), seq4, seq4, 'weights4')


@pytest.fixture(scope='session')
def kernel_space():
    """Two coordinates; level 0 only sees the first one."""
    tower = SeminormFamily(
        [SeminormBlock(np.array([[1.0, 0.0]])), SeminormBlock(np.eye(2))],
        model_id='kernel2',
    )
    return GradedSpace('kernel2', FrechetMetric(tower, GradingConfig(n_max=1)))
