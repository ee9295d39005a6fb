import logging
from typing import Callable, Dict

import numpy as np

from frechet.operators import GradedOperator
from frechet.witnesses import (
    ModelSpace,
    build_normed_model,
    build_scalar_model,
    build_sequence_model,
    build_trig_model,
    derivative_operator,
    multiplication_operator,
)
from utils.config_loader import ModelSpec, OperatorSpec, RunConfig

logger = logging.getLogger(__name__)


def build_model(spec: ModelSpec) -> ModelSpace:
    """Build a model from its config entry."""
    params = spec.params
    phi = params.get('phi', 'rational')
    if spec.kind == 'trig':
        return build_trig_model(
            int(params['M']), int(params['K']), params.get('G'), model_id=spec.id, phi_kind=phi, weights=params.get('weights')
        )
    if spec.kind == 'sequence':
        level_weights = params.get('level_weights')
        return build_sequence_model(
            int(params['D']),
            np.asarray(level_weights, dtype=float) if level_weights is not None else None,
            levels=int(params.get('levels', 4)),
            norm_kind=params.get('norm', 'max'),
            model_id=spec.id,
            phi_kind=phi,
            weights=params.get('weights'),
        )
    if spec.kind == 'scalar':
        return build_scalar_model(params.get('mode', 'sum_form'), model_id=spec.id, phi_kind=phi)
    form = params.get('form')
    return build_normed_model(
        int(params['D']),
        params.get('norm', 'euclidean'),
        np.asarray(form, dtype=float) if form is not None else None,
        model_id=spec.id,
        phi_kind=phi,
    )


class OperatorBuilder:
    """Evaluates operator expressions over the builtin algebra."""

    def __init__(self, models: Dict[str, ModelSpace]):
        self.models = models
        self.operators: Dict[str, GradedOperator] = {}

    def build(self, spec: OperatorSpec) -> GradedOperator:
        params = spec.params
        name = params.get('name', spec.id)
        kind = spec.kind

        if kind in ('compose', 'scale', 'sum'):
            args = [self.operators[ref] for ref in spec.args]
            if kind == 'compose':
                # args are listed outermost first
                result = args[-1]
                for outer in reversed(args[:-1]):
                    result = outer.compose(result)
            elif kind == 'scale':
                result = args[0].scaled(float(params['factor']))
            else:
                result = args[0]
                for other in args[1:]:
                    result = result + other
            operator = GradedOperator(result.matrix, result.source, result.target, name)
        else:
            source = self.models[spec.source]
            target = self.models[spec.target]
            if kind == 'derivative':
                operator = GradedOperator(derivative_operator(source).matrix, source, source, name)
            elif kind == 'multiplication':
                operator = multiplication_operator(source, params['coefficients'], name)
            elif kind == 'diagonal':
                operator = GradedOperator(np.diag(np.asarray(params['values'], dtype=float)), source, target, name)
            elif kind == 'matrix':
                operator = GradedOperator(np.asarray(params['rows'], dtype=float), source, target, name)
            elif kind == 'identity':
                operator = GradedOperator.identity(source, name)
            else:
                operator = GradedOperator.zero(source, target, name)

        self.operators[spec.id] = operator
        logger.debug(f"Built operator {spec.id} ({kind}) {operator.source.model_id} -> {operator.target.model_id}")
        return operator


def build_all(config: RunConfig):
    """Models and operators of a config, in definition order."""
    models = {spec.id: build_model(spec) for spec in config.models}
    builder = OperatorBuilder(models)
    for spec in config.operators:
        builder.build(spec)
    return models, builder.operators


def scan_builder(spec: dict) -> Callable[[int], GradedOperator]:
    """Truncation -> operator for a divergence scan, from a declarative builder entry."""
    kind = spec.get('operator', 'derivative')
    K = int(spec.get('K', 8))
    phi = spec.get('phi', 'rational')

    def build(N: int) -> GradedOperator:
        model = build_trig_model(N, K, phi_kind=phi)
        if kind == 'derivative':
            return derivative_operator(model)
        if kind == 'multiplication':
            return multiplication_operator(model, spec['coefficients'])
        if kind == 'identity':
            return GradedOperator.identity(model)
        raise ValueError(f"Unknown scan operator '{kind}'")

    return build
