import pytest

from handlers.task_handlers import TaskHandlers
from utils.config_loader import parse_config
from utils.operator_builder import build_all
from utils.report_formatter import ReportFormatter

CONFIG = {
    'version': 1,
    'seed': 1,
    'models': [{'id': 'seq', 'kind': 'sequence', 'D': 4}],
    'operators': [
        {'id': 'id', 'kind': 'identity', 'model': 'seq'},
        {'id': 'w', 'kind': 'diagonal', 'model': 'seq', 'values': [1.0, 0.5, 0.25, 0.125]},
        {'id': 'z', 'kind': 'zero', 'model': 'seq'},
    ],
    'tasks': [
        {'id': 'cert', 'type': 'certify', 'operator': 'id', 'r': 0},
        {'id': 'cert_wrongly_negative', 'type': 'certify', 'operator': 'id', 'r': 0, 'expect': 'negative'},
        {'id': 'no_witness', 'type': 'witness', 'name': 'hausdorff', 'operator': 'z', 'expect': 'negative'},
        {'id': 'dist', 'type': 'metric', 'model': 'seq', 'check': 'distance', 'u': [1.0, 0.0, 0.0, 0.0]},
        {'id': 'norm', 'type': 'norm', 'operator': 'w', 'm': 2, 'n': 2},
        {'id': 'broken_norm', 'type': 'norm', 'operator': 'w', 'n': 2},
        {'id': 'wrong_model', 'type': 'witness', 'name': 'step_full', 'model': 'seq', 's': 1, 'expect': 'negative'},
        {'id': 'bump', 'type': 'witness', 'name': 'metric_bump', 'model': 'seq',
         'center': [0.0, 0.0, 0.0, 0.0], 'radius': 0.1, 'points': [[0.0, 0.0, 0.0, 0.0], [10.0, 0.0, 0.0, 0.0]]},
        {'id': 'palette', 'type': 'palette', 'model': 'seq', 'palette': 'FC', 'probes': ['w'], 'included_in': 'T_2'},
    ],
}


@pytest.fixture(scope='module')
def handlers():
    config = parse_config(CONFIG)
    models, operators = build_all(config)
    return TaskHandlers(config, models, operators)


@pytest.fixture(scope='module')
def results(handlers):
    return {result.task_id: result for result in handlers.run_all(workers=1)}


class TestOutcomes:
    def test_certified_identity(self, results):
        result = results['cert']
        assert result.status == 'ok'
        assert result.met
        assert result.results['verification']['passed']
        assert result.results['negative'] is False
        assert result.provenance == {'seed': 1, 'tolerance': 1e-9, 'truncation': 4}

    def test_positive_outcome_when_negative_expected(self, results):
        result = results['cert_wrongly_negative']
        assert result.status == 'unexpected'
        assert not result.met

    def test_missing_witness_is_the_expected_negative(self, results):
        result = results['no_witness']
        assert result.status == 'expected_negative'
        assert result.met
        assert result.results['negative'] is True

    def test_metric_and_norm(self, results):
        assert results['dist'].results['distance'] == pytest.approx(0.96875)
        norm = results['norm'].results['norm']
        assert results['norm'].status == 'ok'
        assert norm['upper'] == pytest.approx(1.0)

    def test_errors_mark_tasks_failed(self, results):
        assert results['broken_norm'].status == 'failed'
        assert results['broken_norm'].error.startswith('KeyError')
        # only certification and witness failures count as negative outcomes
        assert results['wrong_model'].status == 'failed'
        assert results['wrong_model'].error.startswith('TruncationError')

    def test_metric_bump_values(self, results):
        assert results['bump'].results['values'] == [1.0, 0.0]

    def test_palette_task(self, results):
        result = results['palette']
        assert result.status == 'ok', result.results
        assert result.results['inclusion']['holds']


class TestParallelRuns:
    def test_results_keep_config_order(self, handlers):
        serial = handlers.run_all(workers=1)
        parallel = handlers.run_all(workers=4)
        assert [r.task_id for r in parallel] == [task.id for task in handlers.config.tasks]
        formatter = ReportFormatter()
        assert formatter.json_lines(parallel) == formatter.json_lines(serial)

    def test_subset_of_tasks(self, handlers):
        chosen = [task for task in handlers.config.tasks if task.type == 'metric']
        assert [r.task_id for r in handlers.run_all(chosen)] == ['dist']


SEMINORM_BOUND = {'kind': 'gauge_sublevel', 'bounds': [[4, 20.0]], 'measure': 'seminorm', 'strict': True}

WIRED = {
    'version': 1,
    'seed': 3,
    'models': [{'id': 'seq', 'kind': 'sequence', 'D': 4}],
    'operators': [
        {'id': 'id', 'kind': 'identity', 'model': 'seq'},
        {'id': 'w', 'kind': 'diagonal', 'model': 'seq', 'values': [1.0, 0.5, 0.25, 0.125]},
    ],
    'tasks': [
        {'id': 'composed', 'type': 'certify', 'operator': 'w', 'r': 0, 'then': 'id', 'then_r': 1},
        {'id': 'shifted', 'type': 'certify', 'operator': 'w', 'r': 0, 'b': 1, 'normalize': True},
        {'id': 'trb', 'type': 'witness', 'name': 'trb_metric', 'operator': 'w', 'other': 'w', 'r': 0},
        {'id': 'extension', 'type': 'witness', 'name': 'dominated_extension', 'model': 'seq',
         'vectors': [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]], 'values': [1.0, 1.0], 'rescale': True},
        {'id': 'infeasible', 'type': 'witness', 'name': 'dominated_extension', 'model': 'seq',
         'vectors': [[1.0, 0.0, 0.0, 0.0]], 'values': [2.0], 'expect': 'negative'},
        {'id': 'linear_fit', 'type': 'witness', 'name': 'nonlinear_tameness', 'operator': 'w', 'form': 'homogeneous'},
        {'id': 'box_image', 'type': 'witness', 'name': 'maps_into', 'operator': 'w',
         'body': {'half_widths': [0.5, 0.5, 0.5, 0.5]}, 'target': SEMINORM_BOUND},
        {'id': 'tame_point', 'type': 'witness', 'name': 'tame_set', 'model': 'seq',
         'points': [[1.0, 0.0, 0.0, 0.0]], 'alpha': 2.0, 'D': 100.0},
        {'id': 'wild_point', 'type': 'witness', 'name': 'tame_set', 'model': 'seq',
         'points': [[1.0, 0.0, 0.0, 0.0]], 'alpha': 2.0, 'D': 0.5, 'expect': 'negative'},
        {'id': 'box', 'type': 'witness', 'name': 'aa_box', 'model': 'seq', 'a': [1.0, 1.0, 1.0, 1.0]},
        {'id': 'preimage', 'type': 'witness', 'name': 'preimage', 'operator': 'id', 'palette': 'FC',
         'x': [0.2, 0.0, 0.0, 0.0], 'target': {'kind': 'gauge_sublevel', 'bounds': [[4, 1.0]],
                                                'measure': 'seminorm', 'strict': True}},
    ],
}


@pytest.fixture(scope='module')
def wired():
    config = parse_config(WIRED)
    models, operators = build_all(config)
    return {result.task_id: result for result in TaskHandlers(config, models, operators).run_all(workers=1)}


class TestWiredOperations:
    def test_every_task_meets_its_expectation(self, wired):
        assert {task_id: result.status for task_id, result in wired.items() if not result.met} == {}

    def test_composed_certificate(self, wired):
        result = wired['composed'].results
        assert result['certificate']['r'] == 1
        assert result['certificate']['derived_from'] == 'composition'
        assert result['verification']['passed']

    def test_normalized_basis(self, wired):
        certificate = wired['shifted'].results['certificate']
        assert (certificate['r'], certificate['b']) == (1, 0)
        assert certificate['derived_from'] == 'basis_shift'

    def test_operator_is_at_distance_zero_from_itself(self, wired):
        assert wired['trb'].results['distance'] == 0.0

    def test_dominated_extension(self, wired):
        result = wired['extension'].results
        assert result['constant'] == pytest.approx(2.0, rel=1e-6)
        assert result['violations'] == 0
        assert wired['infeasible'].status == 'expected_negative'

    def test_linear_map_has_bounded_constants(self, wired):
        result = wired['linear_fit'].results
        assert result['bounded']
        assert max(result['C']) <= 1.0 + 1e-9

    def test_palette_body_operations(self, wired):
        image = wired['box_image'].results
        assert image['holds'] and image['certain']
        assert image['worst'] == pytest.approx(0.8)
        assert wired['tame_point'].results['tame']
        assert wired['wild_point'].status == 'expected_negative'
        assert wired['box'].results['bounded']
        assert wired['preimage'].results['violations'] == 0
