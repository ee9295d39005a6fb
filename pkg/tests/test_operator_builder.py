import numpy as np
import pytest

from utils.config_loader import ModelSpec, parse_config
from utils.operator_builder import build_all, build_model, scan_builder

ALGEBRA = {
    'version': 1,
    'seed': 0,
    'models': [
        {'id': 'seq', 'kind': 'sequence', 'D': 3, 'levels': 2},
        {'id': 'trig', 'kind': 'trig', 'M': 4, 'K': 2},
    ],
    'operators': [
        {'id': 'a', 'kind': 'diagonal', 'model': 'seq', 'values': [1.0, 2.0, 3.0]},
        {'id': 'b', 'kind': 'matrix', 'model': 'seq', 'rows': [[0, 1, 0], [0, 0, 1], [1, 0, 0]]},
        {'id': 'ab', 'kind': 'compose', 'args': ['a', 'b'], 'name': 'a after b'},
        {'id': 'half', 'kind': 'scale', 'args': ['a'], 'factor': 0.5},
        {'id': 'sum', 'kind': 'sum', 'args': ['a', 'b']},
        {'id': 'd', 'kind': 'derivative', 'model': 'trig'},
        {'id': 'dd', 'kind': 'compose', 'args': ['d', 'd']},
        {'id': 'z', 'kind': 'zero', 'model': 'trig'},
    ],
    'tasks': [],
}


@pytest.fixture(scope='module')
def built():
    return build_all(parse_config(ALGEBRA))


class TestBuildModel:
    def test_trig_model(self):
        model = build_model(ModelSpec('t', 'trig', {'M': 4, 'K': 2, 'G': 20}))
        assert model.model_id == 't'
        assert model.dim == 9
        assert model.n_max == 2
        assert model.param('G') == 20

    def test_sequence_model_with_weights(self):
        model = build_model(ModelSpec('s', 'sequence', {'D': 2, 'level_weights': [[1, 1], [1, 5]]}))
        assert model.n_max == 1
        assert np.allclose(model.tower.profile(np.array([0.0, 1.0])), [1.0, 5.0])

    def test_scalar_and_normed(self):
        line = build_model(ModelSpec('l', 'scalar', {'mode': 'sqrt_scalar'}))
        assert line.dim == 1
        assert line.metric.mode == 'sqrt_scalar'
        plane = build_model(ModelSpec('p', 'normed', {'D': 2, 'norm': 'max'}))
        assert plane.dim == 2
        assert plane.kind == 'normed'


class TestOperatorBuilder:
    def test_compose_lists_outermost_first(self, built):
        _, operators = built
        assert np.allclose(operators['ab'].matrix, operators['a'].matrix @ operators['b'].matrix)
        assert operators['ab'].name == 'a after b'

    def test_scale_and_sum(self, built):
        _, operators = built
        assert np.allclose(operators['half'].matrix, np.diag([0.5, 1.0, 1.5]))
        assert np.allclose(operators['sum'].matrix, operators['a'].matrix + operators['b'].matrix)

    def test_derivative_and_zero(self, built):
        models, operators = built
        assert operators['d'].source is models['trig']
        assert np.allclose(operators['dd'].matrix, operators['d'].matrix @ operators['d'].matrix)
        assert operators['z'].is_zero


class TestScanBuilder:
    def test_builds_on_requested_truncation(self):
        build = scan_builder({'operator': 'derivative', 'K': 2})
        operator = build(8)
        assert operator.source.dim == 17
        assert operator.source.n_max == 2

    def test_unknown_operator(self):
        with pytest.raises(ValueError):
            scan_builder({'operator': 'shift'})(4)
