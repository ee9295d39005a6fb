import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from frechet.errors import CertificationError, InfeasibleExtensionError, NoWitnessError
from frechet.graded_space import (
    check_metric_axioms,
    gauge,
    ray_profile,
    scalar_bound_check,
    strictness,
)
from frechet.operators import (
    GradedOperator,
    KSetSpec,
    certify_tame,
    compose_certified,
    eval_modulus,
    hausdorff_witness,
    kj_membership,
    nonlinear_tameness_probe,
    nontameness_scan,
    normalize_basis,
    op_norm,
    trb_metric,
    verify_certificate,
)
from frechet.palettes import (
    aa_box,
    absorption_index,
    body_from_dict,
    builtin_palette,
    check_axioms,
    coordinate_box,
    evaluation_preimage_check,
    is_strong,
    is_tame_set,
    maps_into,
    palette_from_dict,
    palette_inclusion,
)
from frechet.witnesses import (
    ModelSpace,
    SublinearSpec,
    dominated_extension,
    eval_discontinuity_gadget,
    metric_bump,
    prescribed_jet,
    sinN_ratio,
    step_full_witness,
    unbounded_functional,
)
from utils.config_loader import RunConfig, TaskSpec
from utils.operator_builder import scan_builder

logger = logging.getLogger(__name__)

# Errors that count as the expected outcome of a task marked negative
NEGATIVE_ERRORS = (CertificationError, InfeasibleExtensionError, NoWitnessError)


@dataclass
class TaskResult:
    task_id: str
    task_type: str
    status: str
    met: bool
    inputs: Dict[str, Any]
    results: Dict[str, Any] = field(default_factory=dict)
    provenance: Dict[str, Any] = field(default_factory=dict)
    error: Optional[str] = None
    ladder: Tuple[Tuple[int, float, float], ...] = ()

    def to_dict(self) -> dict:
        return {
            'task_id': self.task_id,
            'type': self.task_type,
            'status': self.status,
            'met': self.met,
            'inputs': self.inputs,
            'results': self.results,
            'provenance': self.provenance,
            'error': self.error,
        }


class TaskHandlers:
    def __init__(self, config: RunConfig, models: Dict[str, ModelSpace], operators: Dict[str, GradedOperator]):
        self.config = config
        self.models = models
        self.operators = operators

        self.dispatch = {
            'certify': self.certify,
            'scan': self.scan,
            'norm': self.norm,
            'metric': self.metric,
            'palette': self.palette,
            'witness': self.witness,
        }

    def run_task(self, task: TaskSpec) -> TaskResult:
        """Run one task; errors mark it failed and never escape."""
        seed = self.config.task_seed(task)
        tolerance = self.config.task_tolerance(task)
        provenance = {'seed': seed, 'tolerance': tolerance, 'truncation': self._truncation(task)}
        expect_negative = task.expect == 'negative'

        try:
            results, negative, ladder = self.dispatch[task.type](task, seed, tolerance)
        except NEGATIVE_ERRORS as e:
            if expect_negative:
                logger.info(f"Task {task.id}: expected negative outcome ({type(e).__name__})")
                return TaskResult(task.id, task.type, 'expected_negative', True, task.params,
                                  {'negative': True, 'reason': str(e)}, provenance)
            logger.error(f"Task {task.id} failed: {e}")
            return TaskResult(task.id, task.type, 'failed', False, task.params, {}, provenance, f"{type(e).__name__}: {e}")
        except Exception as e:
            logger.error(f"Task {task.id} failed: {e}")
            return TaskResult(task.id, task.type, 'failed', False, task.params, {}, provenance, f"{type(e).__name__}: {e}")

        met = negative == expect_negative
        if not met:
            status = 'unexpected'
            logger.warning(f"Task {task.id}: outcome {'negative' if negative else 'positive'} but expected {task.expect}")
        else:
            status = 'expected_negative' if negative else 'ok'
        results['negative'] = negative
        return TaskResult(task.id, task.type, status, met, task.params, results, provenance, None, tuple(ladder))

    def run_all(self, tasks: Optional[List[TaskSpec]] = None, workers: Optional[int] = None) -> List[TaskResult]:
        """Run tasks, possibly in parallel; results come back in config order."""
        tasks = list(self.config.tasks if tasks is None else tasks)
        if workers is None:
            workers = int(os.getenv('FRECHET_WORKERS', '1'))
        workers = max(1, workers)
        if workers == 1 or len(tasks) < 2:
            return [self.run_task(task) for task in tasks]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(self.run_task, tasks))

    def _truncation(self, task: TaskSpec) -> Optional[int]:
        params = task.params
        if 'operator' in params and params['operator'] in self.operators:
            return self.operators[params['operator']].source.n_max
        if 'model' in params and params['model'] in self.models:
            return self.models[params['model']].n_max
        if task.type == 'scan' and params.get('ladder'):
            return int(max(params['ladder']))
        return None

    # Task types

    def _certificate(self, A: GradedOperator, params: dict, seed: int, tolerance: float, prefix: str = ''):
        return certify_tame(
            A,
            int(params.get(f'{prefix}r', 0)),
            int(params.get(f'{prefix}b', 0)),
            params.get('variant', 'hamilton'),
            seed=seed,
            samples=int(params.get('samples', 256)),
            tolerance=tolerance,
            verify=False,
        )

    def certify(self, task: TaskSpec, seed: int, tolerance: float):
        """Certify one operator, or the composition 'then' after 'operator' from the two factor certificates."""
        params = task.params
        A = self.operators[params['operator']]
        samples = int(params.get('samples', 256))
        cert = self._certificate(A, params, seed, tolerance)
        if params.get('normalize'):
            cert = normalize_basis(cert)
        if 'then' in params:
            B = self.operators[params['then']]
            A, cert = compose_certified(A, cert, B, self._certificate(B, params, seed, tolerance, prefix='then_'))
        report = verify_certificate(A, cert, samples=samples)
        results = {
            'operator': A.name,
            'certificate': cert.to_dict(),
            'verification': {
                'passed': report.passed,
                'checked': report.checked,
                'violations': [list(v) for v in report.violations],
                'worst_ratio': report.worst_ratio,
            },
        }
        return results, not report.passed, ()

    def scan(self, task: TaskSpec, seed: int, tolerance: float):
        params = task.params
        evidence = nontameness_scan(
            scan_builder(params.get('builder', {})),
            int(params.get('r', 0)),
            params['ladder'],
            level=int(params.get('level', 0)),
            seed=seed,
            samples=int(params.get('samples', 64)),
        )
        return evidence.to_dict(), evidence.verdict == 'diverging_fit', evidence.rows()

    def norm(self, task: TaskSpec, seed: int, tolerance: float):
        params = task.params
        value = op_norm(
            self.operators[params['operator']],
            int(params['m']),
            int(params['n']),
            params.get('variant', 'hamilton'),
            seed=seed,
            samples=int(params.get('samples', 256)),
            tolerance=tolerance,
        )
        max_width = params.get('max_width')
        too_wide = max_width is not None and value.width > float(max_width)
        return {'norm': value.to_dict()}, too_wide, ()

    def metric(self, task: TaskSpec, seed: int, tolerance: float):
        params = task.params
        model = self.models[params['model']]
        metric = model.metric
        check = params['check']

        if check == 'distance':
            u = np.asarray(params['u'], dtype=float)
            v = np.asarray(params.get('v', np.zeros(model.dim)), dtype=float)
            return {'distance': float(metric.distance(u, v))}, False, ()
        if check == 'axioms':
            counts = check_metric_axioms(metric, seed, int(params.get('samples', 10_000)), float(params.get('tolerance_axioms', 1e-12)))
            return {'violations': counts}, any(counts.values()), ()
        if check == 'strictness':
            grid = params.get('r_grid')
            report = strictness(model.vector(params['vector']), metric, None if grid is None else np.asarray(grid, dtype=float))
            return report.to_dict(), not math.isfinite(report.limit), ()
        if check == 'gauge':
            points = np.atleast_2d(np.asarray(params['points'], dtype=float))
            value = gauge(points, int(params['n']), metric, seed, tolerance=tolerance)
            max_width = params.get('max_width')
            return {'gauge': value.to_dict()}, max_width is not None and value.width > float(max_width), ()
        if check == 'scalar_bound':
            bound = scalar_bound_check(model.vector(params['vector']), float(params['s']), metric)
            return {'holds': bound.holds, 'margin': bound.margin, 'multiplier': bound.multiplier}, not bound.holds, ()
        profile = ray_profile(model.vector(params['vector']), metric, np.asarray(params['grid'], dtype=float))
        return {'rows': [list(row) for row in profile.rows()]}, False, ()

    def _palette(self, spec, model: ModelSpace):
        if isinstance(spec, str):
            return builtin_palette(spec, model)
        return palette_from_dict(spec, model)

    def _chain_body(self, spec: dict, model: ModelSpace):
        if 'half_widths' in spec:
            return coordinate_box(model, spec['half_widths'])
        return body_from_dict(spec, model)

    def palette(self, task: TaskSpec, seed: int, tolerance: float):
        params = task.params
        model = self.models[params['model']]
        P = self._palette(params['palette'], model)
        probes = [self.operators[ref] for ref in params.get('probes', [])]

        axioms = check_axioms(P, probes, int(params.get('depth', 2)), seed)
        strong = is_strong(P, seed)
        results = {'palette': P.name, 'axioms': axioms.to_dict(), 'strong': strong.to_dict()}
        negative = not axioms.passed
        if params.get('require_strong'):
            negative = negative or not strong.strong

        if 'included_in' in params:
            inclusion = palette_inclusion(P, self._palette(params['included_in'], model))
            results['inclusion'] = inclusion.to_dict()
            negative = negative or not inclusion.holds
        if 'chain' in params:
            chain = [self._chain_body(spec, model) for spec in params['chain']]
            absorption = absorption_index(chain, P)
            results['absorption'] = absorption.to_dict()
            negative = negative or not absorption.found
        return results, negative, ()

    def witness(self, task: TaskSpec, seed: int, tolerance: float):
        params = task.params
        name = params['name']
        model = self.models.get(params.get('model'))
        A = self.operators.get(params.get('operator'))

        if name == 'step_full':
            report = step_full_witness(model, float(params['s']))
            return report.to_dict(), not report.holds, ()
        if name == 'sin_ratio':
            return {'ratio': sinN_ratio(model, int(params['N']))}, False, ()
        if name == 'prescribed_jet':
            jet = prescribed_jet(
                params['points'],
                params['values'],
                params.get('orders'),
                params.get('half_widths'),
                params.get('smoothness'),
                bool(params.get('small', False)),
            )
            conditions = jet.conditions()
            mismatch = any(abs(achieved - a) > tolerance * max(1.0, abs(a)) for _, _, a, achieved in conditions)
            results = {'conditions': [list(c) for c in conditions], 'supports_disjoint': jet.supports_disjoint()}
            return results, mismatch or not jet.supports_disjoint(), ()
        if name == 'unbounded_functional':
            functional = unbounded_functional(model, float(params.get('eps', 0.5)), int(params.get('terms', 3)), seed)
            return functional.to_dict(), False, ()
        if name == 'eval_gadget':
            report = eval_discontinuity_gadget(
                model,
                int(params.get('length', 5)),
                int(params.get('spacing', 4)),
                int(params.get('start', 1)),
                int(params.get('direction', 0)),
                seed,
            )
            broken = any(
                value <= n or distance > 2.0 ** -n
                for n, value, distance in zip(report.indices, report.values, report.distances)
            )
            return report.to_dict(), broken, ()
        if name == 'hausdorff':
            spec = KSetSpec(int(params['j']), params.get('base')) if 'j' in params else None
            return hausdorff_witness(A, spec, seed).to_dict(), False, ()
        if name == 'kj_membership':
            membership = kj_membership(A, KSetSpec(int(params['j']), params.get('base')), seed)
            results = {
                'member': membership.member,
                'witness': membership.witness,
                'norms': [[i, value.to_dict()] for i, value in membership.norms],
            }
            return results, not membership.member, ()
        if name == 'eval_modulus':
            cert = certify_tame(A, int(params.get('r', 1)), int(params.get('b', 0)), seed=seed, tolerance=tolerance)
            report = eval_modulus(A, cert, int(params['n']), int(params.get('samples', 10_000)), seed)
            results = {
                'delta': report.delta,
                'samples': report.samples,
                'violations': report.violations,
                'worst_ratio': report.worst_ratio,
                'directions': report.directions,
            }
            return results, report.violations > 0, ()
        if name == 'trb_metric':
            B = self.operators[params['other']]
            r, b = int(params.get('r', 0)), int(params.get('b', 0))
            distance = trb_metric(
                A, B, r, b,
                self._certificate(A, params, seed, tolerance),
                self._certificate(B, params, seed, tolerance),
                seed=seed,
                samples=int(params.get('samples', 256)),
            )
            max_distance = params.get('max_distance')
            return {'distance': distance}, max_distance is not None and distance > float(max_distance), ()
        if name == 'dominated_extension':
            p = SublinearSpec(tuple((int(n), float(c)) for n, c in params.get('terms', [[0, 1.0]])))
            f = dominated_extension(
                [model.vector(v) for v in params['vectors']],
                params['values'],
                p,
                model,
                bool(params.get('rescale', False)),
                seed,
                int(params.get('samples', 10_000)),
            )
            results = {
                'coefficients': [float(x) for x in f.coefficients],
                'constant': f.constant,
                'checked': f.checked,
                'violations': f.violations,
            }
            return results, f.violations > 0, ()
        if name == 'nonlinear_tameness':
            power = int(params.get('power', 1))
            base = params.get('base')
            result = nonlinear_tameness_probe(
                lambda x: A.matrix @ (np.asarray(x, dtype=float) ** power),
                A.source.vector(np.zeros(A.source.dim) if base is None else base),
                int(params.get('r', 0)),
                params.get('form', 'additive_one'),
                A.source,
                A.target,
                seed=seed,
                growth_limit=float(params.get('growth_limit', 10.0)),
            )
            return result.to_dict(), not result.bounded, ()
        if name == 'maps_into':
            report = maps_into(
                A,
                self._chain_body(params['body'], A.source),
                body_from_dict(params['target'], A.target),
                seed,
                int(params.get('samples', 256)),
            )
            return report.to_dict(), not report.holds, ()
        if name == 'tame_set':
            if 'body' in params:
                S = self._chain_body(params['body'], model)
            else:
                S = [model.vector(v) for v in params['points']]
            report = is_tame_set(S, float(params.get('alpha', 2.0)), float(params['D']), model, seed)
            return report.to_dict(), not report.tame, ()
        if name == 'aa_box':
            box = aa_box(params['a'], model, int(params.get('start', 1)), params.get('measure', 'seminorm'), seed)
            return box.to_dict(), not box.bounded, ()
        if name == 'preimage':
            report = evaluation_preimage_check(
                self._palette(params['palette'], A.source),
                A,
                A.source.vector(params['x']),
                body_from_dict(params['target'], A.target),
                seed,
                int(params.get('samples', 64)),
                bool(params.get('require_origin', True)),
            )
            return report.to_dict(), not report.holds, ()

        # metric_bump
        bump = metric_bump(model, model.vector(params['center']), float(params['radius']))
        points = np.atleast_2d(np.asarray(params.get('points', [params['center']]), dtype=float))
        values = np.atleast_1d(bump(points))
        return {'values': [float(x) for x in values]}, False, ()
