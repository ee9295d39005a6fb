import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from frechet.errors import ConfigError

logger = logging.getLogger(__name__)

CONFIG_VERSION = 1
MODEL_KINDS = ('trig', 'sequence', 'scalar', 'normed')
OPERATOR_KINDS = ('derivative', 'multiplication', 'diagonal', 'matrix', 'identity', 'zero', 'compose', 'scale', 'sum')
TASK_TYPES = ('certify', 'scan', 'norm', 'metric', 'palette', 'witness')
WITNESS_NAMES = (
    'step_full',
    'sin_ratio',
    'prescribed_jet',
    'unbounded_functional',
    'eval_gadget',
    'hausdorff',
    'kj_membership',
    'eval_modulus',
    'metric_bump',
    'trb_metric',
    'dominated_extension',
    'nonlinear_tameness',
    'maps_into',
    'tame_set',
    'aa_box',
    'preimage',
)
METRIC_CHECKS = ('distance', 'axioms', 'strictness', 'gauge', 'scalar_bound', 'ray')
EXPECTATIONS = ('positive', 'negative')
REPORT_FORMATS = ('json', 'csv')

# Tasks whose results need no random draws
_UNSAMPLED = {('metric', 'distance'), ('metric', 'strictness'), ('metric', 'ray'), ('metric', 'scalar_bound'),
              ('witness', 'step_full'), ('witness', 'sin_ratio'), ('witness', 'prescribed_jet'),
              ('witness', 'metric_bump')}


@dataclass(frozen=True)
class ModelSpec:
    id: str
    kind: str
    params: Dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class OperatorSpec:
    id: str
    kind: str
    source: Optional[str] = None
    target: Optional[str] = None
    args: Tuple[str, ...] = ()
    params: Dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class TaskSpec:
    id: str
    type: str
    params: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None
    tolerance: Optional[float] = None
    expect: str = 'positive'

    @property
    def subtype(self) -> Optional[str]:
        return self.params.get('name') or self.params.get('check')


@dataclass(frozen=True)
class RunConfig:
    version: int
    models: Tuple[ModelSpec, ...]
    operators: Tuple[OperatorSpec, ...]
    tasks: Tuple[TaskSpec, ...]
    seed: Optional[int] = None
    tolerance: float = 1e-9
    output_dir: str = 'reports'
    format: str = 'json'
    checksum: str = ''

    def task_seed(self, task: TaskSpec) -> int:
        return task.seed if task.seed is not None else (self.seed if self.seed is not None else 0)

    def task_tolerance(self, task: TaskSpec) -> float:
        return task.tolerance if task.tolerance is not None else self.tolerance


def config_checksum(data: dict) -> str:
    canonical = json.dumps(data, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def _model_refs(spec: OperatorSpec) -> List[str]:
    return [ref for ref in (spec.source, spec.target) if ref is not None]


def _task_refs(task: TaskSpec) -> Tuple[List[str], List[str]]:
    """Model and operator ids a task refers to."""
    params = task.params
    models = [params[key] for key in ('model',) if key in params]
    operators = [params[key] for key in ('operator', 'other', 'then') if key in params]
    operators.extend(params.get('probes', []))
    return models, operators


def parse_config(data: dict, seed: Optional[int] = None, tolerance: Optional[float] = None) -> RunConfig:
    """Validate a raw config dict; every problem is collected before raising."""
    errors: List[str] = []
    if not isinstance(data, dict):
        raise ConfigError(["config must be a JSON object"])

    version = data.get('version')
    if version != CONFIG_VERSION:
        errors.append(f"unknown config version {version!r}, expected {CONFIG_VERSION}")

    run_seed = data.get('seed') if seed is None else seed
    if run_seed is not None and (not isinstance(run_seed, int) or run_seed < 0):
        errors.append(f"seed must be a nonnegative integer, got {run_seed!r}")
    run_tolerance = data.get('tolerance', 1e-9) if tolerance is None else tolerance
    if not isinstance(run_tolerance, (int, float)) or not run_tolerance > 0:
        errors.append(f"tolerance must be positive, got {run_tolerance!r}")

    output = data.get('output', {})
    report_format = output.get('format', 'json')
    if report_format not in REPORT_FORMATS:
        errors.append(f"unknown report format {report_format!r}")

    models: List[ModelSpec] = []
    model_ids = set()
    for i, raw in enumerate(data.get('models', [])):
        model_id, kind = raw.get('id'), raw.get('kind')
        if not model_id:
            errors.append(f"models[{i}] has no id")
            continue
        if model_id in model_ids:
            errors.append(f"model '{model_id}' defined twice")
        if kind not in MODEL_KINDS:
            errors.append(f"model '{model_id}' has unknown kind {kind!r}")
        model_ids.add(model_id)
        params = {key: value for key, value in raw.items() if key not in ('id', 'kind')}
        models.append(ModelSpec(model_id, kind, params))

    operators: List[OperatorSpec] = []
    operator_ids = set()
    for i, raw in enumerate(data.get('operators', [])):
        op_id, kind = raw.get('id'), raw.get('kind')
        if not op_id:
            errors.append(f"operators[{i}] has no id")
            continue
        if kind not in OPERATOR_KINDS:
            errors.append(f"operator '{op_id}' has unknown kind {kind!r}")
        source = raw.get('source', raw.get('model'))
        target = raw.get('target', raw.get('model'))
        spec = OperatorSpec(
            op_id,
            kind,
            source,
            target,
            tuple(raw.get('args', [])),
            {key: value for key, value in raw.items() if key not in ('id', 'kind', 'source', 'target', 'model', 'args')},
        )
        for ref in _model_refs(spec):
            if ref not in model_ids:
                errors.append(f"operator '{op_id}' refers to undefined model '{ref}'")
        for ref in spec.args:
            if ref not in operator_ids:
                errors.append(f"operator '{op_id}' refers to undefined operator '{ref}'")
        if kind in ('compose', 'scale', 'sum') and not spec.args:
            errors.append(f"operator '{op_id}' of kind {kind} needs args")
        elif kind not in ('compose', 'scale', 'sum') and source is None:
            errors.append(f"operator '{op_id}' needs a model")
        if op_id in operator_ids:
            errors.append(f"operator '{op_id}' defined twice")
        operator_ids.add(op_id)
        operators.append(spec)

    tasks: List[TaskSpec] = []
    task_ids = set()
    for i, raw in enumerate(data.get('tasks', [])):
        task_id, task_type = raw.get('id') or f"task{i}", raw.get('type')
        if task_id in task_ids:
            errors.append(f"task '{task_id}' defined twice")
        task_ids.add(task_id)
        if task_type not in TASK_TYPES:
            errors.append(f"task '{task_id}' has unknown type {task_type!r}")
        expect = raw.get('expect', 'positive')
        if expect not in EXPECTATIONS:
            errors.append(f"task '{task_id}' has unknown expectation {expect!r}")
        params = {key: value for key, value in raw.items() if key not in ('id', 'type', 'seed', 'tolerance', 'expect')}
        task = TaskSpec(task_id, task_type, params, raw.get('seed'), raw.get('tolerance'), expect)

        if task_type == 'witness' and task.params.get('name') not in WITNESS_NAMES:
            errors.append(f"task '{task_id}' names unknown witness {task.params.get('name')!r}")
        if task_type == 'metric' and task.params.get('check') not in METRIC_CHECKS:
            errors.append(f"task '{task_id}' has unknown metric check {task.params.get('check')!r}")
        task_models, task_operators = _task_refs(task)
        for ref in task_models:
            if ref not in model_ids:
                errors.append(f"task '{task_id}' refers to undefined model '{ref}'")
        for ref in task_operators:
            if ref not in operator_ids:
                errors.append(f"task '{task_id}' refers to undefined operator '{ref}'")
        if (task_type, task.subtype) not in _UNSAMPLED and task.seed is None and run_seed is None:
            errors.append(f"task '{task_id}' is sampled and needs a seed")
        tasks.append(task)

    if errors:
        for error in errors:
            logger.error(f"Config error: {error}")
        raise ConfigError(errors)

    return RunConfig(
        version=version,
        models=tuple(models),
        operators=tuple(operators),
        tasks=tuple(tasks),
        seed=run_seed,
        tolerance=float(run_tolerance),
        output_dir=output.get('dir', 'reports'),
        format=report_format,
        checksum=config_checksum(data),
    )


def load_config(path: str, seed: Optional[int] = None, tolerance: Optional[float] = None) -> RunConfig:
    """Read and validate a RunConfig file."""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"])
    except json.JSONDecodeError as e:
        raise ConfigError([f"config file {path} is not valid JSON: {e}"])
    config = parse_config(data, seed, tolerance)
    logger.info(f"Loaded config {path}: {len(config.models)} models, {len(config.operators)} operators, {len(config.tasks)} tasks")
    return config
