import math

import numpy as np
import pytest

from frechet.errors import ChainOrderError, DimensionError, UnknownPaletteError, UnsupportedBodyError
from frechet.operators import GradedOperator
from frechet.palettes import (
    BUILTIN_PALETTES,
    GaugeSublevel,
    MetricBall,
    PaletteFamily,
    VPolytope,
    aa_box,
    absorption_index,
    body_from_dict,
    builtin_palette,
    check_axioms,
    coordinate_box,
    cross_polytope,
    evaluation_preimage_check,
    is_strong,
    is_tame_set,
    maps_into,
    palette_from_dict,
    palette_inclusion,
)
from frechet.witnesses import step_full_witness

BOX_CHAIN = ([1, 0, 0, 0], [1, 1, 0, 0], [1, 1, 1, 0], [1, 1, 1, 1])


class TestBodies:
    def test_polytope_membership_and_gauge(self, seq4):
        box = coordinate_box(seq4, [1.0, 1.0, 0.0, 0.0])
        inside = box.contains(np.array([[0.5, -0.5, 0.0, 0.0], [0.0, 0.0, 0.1, 0.0]]))
        assert inside.tolist() == [True, False]
        assert box.gauge(np.array([[2.0, 0.0, 0.0, 0.0]]))[0] == pytest.approx(2.0, rel=1e-7)
        assert np.isinf(box.gauge(np.array([[0.0, 0.0, 1.0, 0.0]]))[0])

    def test_polytope_validation(self, seq4):
        with pytest.raises(DimensionError):
            VPolytope(np.zeros((2, 3)), seq4)
        with pytest.raises(ValueError):
            coordinate_box(seq4, [1.0, -1.0, 0.0, 0.0])

    def test_metric_ball(self, seq4):
        ball = MetricBall(np.zeros(4), 0.5, seq4)
        assert ball.contains(np.array([[0.01, 0.0, 0.0, 0.0], [5.0, 0.0, 0.0, 0.0]])).tolist() == [True, False]
        assert ball.recession().shape == (4, 0)
        with pytest.raises(ValueError):
            MetricBall(np.zeros(4), 0.0, seq4)

    def test_gauge_sublevel_scaling(self, seq4):
        body = GaugeSublevel([(2, 1.0)], seq4, 'seminorm')
        assert body.contains(np.array([[0.5, 0.0, 0.0, 0.0]]))[0]
        assert not body.contains(np.array([[0.0, 0.0, 0.5, 0.0]]))[0]
        assert body.scaled(8.0).contains(np.array([[0.0, 0.0, 0.5, 0.0]]))[0]

    def test_body_from_dict(self, seq4):
        ball = body_from_dict({'kind': 'metric_ball', 'radius': 0.25}, seq4)
        assert isinstance(ball, MetricBall)
        assert ball.at_origin
        with pytest.raises(UnsupportedBodyError):
            body_from_dict({'kind': 'ellipsoid'}, seq4)


class TestBuiltinPalettes:
    def test_fc_generators(self, seq4):
        palette = builtin_palette('FC', seq4)
        assert len(palette.generators) == 4
        assert all(isinstance(body, VPolytope) for body in palette.generators)

    @pytest.mark.parametrize('name', BUILTIN_PALETTES)
    def test_axioms_hold(self, seq4, weights4, name):
        report = check_axioms(builtin_palette(name, seq4), [weights4])
        assert report.passed, [entry.to_dict() for entry in report.failures()]

    def test_whole_space_ball_breaks_bounded_images(self, seq4):
        palette = builtin_palette('B', seq4, {'radii': [4.0]})
        report = check_axioms(palette, [GradedOperator.identity(seq4)])
        assert report.entry(1).status == 'fail'
        assert not report.passed

    def test_unknown_names(self, seq4):
        with pytest.raises(UnknownPaletteError):
            builtin_palette('Q', seq4)
        with pytest.raises(UnknownPaletteError):
            builtin_palette('X_2', seq4)
        assert builtin_palette('T_3', seq4).name == 'T_3'

    def test_palette_from_dict(self, seq4):
        palette = palette_from_dict(
            {'generators': [{'kind': 'metric_ball', 'radius': 0.5}], 'closure_flags': ['union'], 'name': 'one'},
            seq4,
        )
        assert palette.closure_flags == frozenset({'union'})
        assert not palette.scalable
        assert palette_from_dict({'builtin': 'F'}, seq4).name == 'F'

    def test_generators_share_a_model(self, seq4, trig16):
        with pytest.raises(DimensionError):
            PaletteFamily((MetricBall(np.zeros(4), 0.5, seq4), MetricBall(np.zeros(trig16.dim), 0.5, trig16)))


class TestStrongness:
    def test_small_balls_are_strong(self, seq4):
        report = is_strong(builtin_palette('B_s', seq4))
        assert report.strong
        assert len(report.witnesses) == seq4.metric.dyadic_max + 1

    def test_fc_on_trig_model(self, trig16, d16):
        palette = builtin_palette('FC', trig16)
        report = check_axioms(palette, [d16])
        assert report.passed, [entry.to_dict() for entry in report.failures()]
        strong = is_strong(palette)
        assert strong.strong
        assert len(strong.witnesses) == trig16.metric.dyadic_max + 1

    def test_fixed_ball_without_scaling(self, seq4):
        palette = PaletteFamily((MetricBall(np.zeros(4), 0.6, seq4),), frozenset({'union', 'hull'}))
        report = is_strong(palette)
        assert not report
        assert report.first_failure == 1


class TestAbsorption:
    def test_box_chain_absorbs_fc(self, seq4):
        chain = [coordinate_box(seq4, widths) for widths in BOX_CHAIN]
        report = absorption_index(chain, builtin_palette('FC', seq4))
        assert report.index == 4
        assert report.found

    def test_nested_balls_absorb_at_the_first_element(self, seq4):
        chain = [MetricBall(np.zeros(4), radius, seq4) for radius in (0.5, 1.0)]
        report = absorption_index(chain, builtin_palette('FC', seq4))
        assert report.index == 1
        assert all(math.isfinite(scale) for scale in report.scales)

    def test_short_chain_never_absorbs(self, seq4):
        chain = [coordinate_box(seq4, widths) for widths in BOX_CHAIN[:3]]
        report = absorption_index(chain, builtin_palette('FC', seq4))
        assert report.index is None
        assert report.unabsorbed == 2

    def test_chain_must_increase(self, seq4):
        chain = [coordinate_box(seq4, widths) for widths in reversed(BOX_CHAIN)]
        with pytest.raises(ChainOrderError) as excinfo:
            absorption_index(chain, builtin_palette('FC', seq4))
        assert excinfo.value.index == 0

    def test_empty_chain(self, seq4):
        with pytest.raises(ValueError):
            absorption_index([], builtin_palette('FC', seq4))


class TestInclusion:
    def test_palette_ladder(self, seq4):
        assert palette_inclusion(builtin_palette('FC', seq4), builtin_palette('T_2', seq4))
        assert palette_inclusion(builtin_palette('T_2', seq4), builtin_palette('C', seq4))

    def test_inclusion_carries_neighborhoods(self, seq4):
        fc, t2 = builtin_palette('FC', seq4), builtin_palette('T_2', seq4)
        report = palette_inclusion(fc, t2)
        assert report.holds
        identity = GradedOperator.identity(seq4)
        for body, scale in zip(fc.generators, report.scales):
            host = next(g for g in t2.generators if g.required_scale(body.extent) == scale)
            member = host.scaled(scale)
            target = GaugeSublevel([(n, 2.0 * b) for n, b in member.bounds], seq4, 'gauge', strict=True)
            assert maps_into(identity, member, target, samples=0).holds
            narrow = maps_into(identity, body, target)
            assert narrow.holds
            assert narrow.certain

    def test_models_must_agree(self, seq4, trig16):
        with pytest.raises(DimensionError):
            palette_inclusion(builtin_palette('FC', seq4), builtin_palette('FC', trig16))


class TestMapsInto:
    def test_into_ball_is_sampled(self, seq4):
        identity = GradedOperator.identity(seq4)
        report = maps_into(identity, cross_polytope(seq4, 0.01), MetricBall(np.zeros(4), 0.5, seq4))
        assert report.holds
        assert not report.certain

    def test_into_convex_sublevel_is_certain(self, seq4):
        identity = GradedOperator.identity(seq4)
        target = GaugeSublevel([(4, 10.0)], seq4, 'seminorm', strict=True)
        report = maps_into(identity, cross_polytope(seq4, 0.01), target)
        assert report.holds
        assert report.certain

    def test_failure_is_certain(self, seq4):
        identity = GradedOperator.identity(seq4)
        report = maps_into(identity, cross_polytope(seq4, 100.0), MetricBall(np.zeros(4), 0.5, seq4))
        assert not report.holds
        assert report.certain

    def test_smaller_body_and_larger_target_keep_the_map(self, seq4, weights4):
        def bound(b):
            return GaugeSublevel([(4, b)], seq4, 'seminorm', strict=True)

        outcomes = []
        for scale in (0.05, 0.5, 5.0):
            report = maps_into(weights4, cross_polytope(seq4, scale), bound(20.0))
            outcomes.append(report.holds)
            assert report.certain
            if report.holds:
                assert maps_into(weights4, cross_polytope(seq4, scale / 2), bound(40.0)).holds
            else:
                assert not maps_into(weights4, cross_polytope(seq4, 2 * scale), bound(10.0)).holds
        assert outcomes == [True, True, False]

    def test_ball_target_monotonicity(self, seq4):
        identity = GradedOperator.identity(seq4)
        assert maps_into(identity, cross_polytope(seq4, 0.01), MetricBall(np.zeros(4), 0.5, seq4)).holds
        assert maps_into(identity, cross_polytope(seq4, 0.005), MetricBall(np.zeros(4), 1.0, seq4)).holds

    def test_polytope_target_rejected(self, seq4):
        identity = GradedOperator.identity(seq4)
        with pytest.raises(UnsupportedBodyError):
            maps_into(identity, cross_polytope(seq4), cross_polytope(seq4))


class TestTameSets:
    def test_step_full_vector_is_not_tame(self, trig16):
        v = step_full_witness(trig16, 2).vector
        assert not is_tame_set([v], 2.0, 10.0, trig16)

    def test_singleton_is_tame_for_a_large_constant(self, seq4):
        v = seq4.vector([1.0, -0.5, 0.25, 0.0])
        levels = is_tame_set([v], 2.0, 1.0, seq4).levels
        D = 2.0 * max(upper / bound for _, upper, bound in levels) + 1.0
        report = is_tame_set([v], 2.0, D, seq4)
        assert report.tame
        assert len(report.levels) == seq4.metric.dyadic_max + 1

    def test_empty_set_is_tame(self):
        assert is_tame_set([], 2.0, 1.0)

    def test_alpha_must_be_positive(self, seq4):
        with pytest.raises(ValueError):
            is_tame_set([seq4.basis(0)], 0.0, 1.0, seq4)

    def test_aa_box(self, trig16):
        box = aa_box([4.0 ** i for i in range(1, 9)], trig16, start=1)
        assert box.bounded
        sin2 = np.zeros(trig16.dim)
        sin2[trig16.mode_index(2, 'sin')] = 1.0
        assert box.body.contains(trig16.vector(sin2))[0]
        assert all(np.isfinite(box.level_bounds))


class TestEvaluationPreimage:
    def test_neighborhood_of_identity(self, seq4):
        report = evaluation_preimage_check(
            builtin_palette('FC', seq4),
            GradedOperator.identity(seq4),
            seq4.zero(),
            MetricBall(np.zeros(4), 0.5, seq4),
        )
        assert report.found
        assert report.holds

    def test_image_must_lie_in_target(self, seq4):
        with pytest.raises(ValueError):
            evaluation_preimage_check(
                builtin_palette('FC', seq4),
                GradedOperator.identity(seq4),
                seq4.vector([5.0, 0.0, 0.0, 0.0]),
                MetricBall(np.zeros(4), 0.5, seq4),
            )

    def test_body_away_from_origin_admits_a_violation(self, seq4):
        # a single generator off the origin: x + P_N misses x
        palette = PaletteFamily((VPolytope([[0.0, 0.5, 0.0, 0.0]], seq4),))
        zero = GradedOperator.zero(seq4, seq4)
        x = seq4.vector([1.0, 0.0, 0.0, 0.0])
        target = GaugeSublevel([(4, 1.0)], seq4, 'seminorm', strict=True)

        located = evaluation_preimage_check(palette, zero, x, target, samples=0, require_origin=False)
        assert located.found
        assert located.origin_inside is False
        assert located.accepted == 0

        matrix = np.zeros((4, 4))
        matrix[0, 0] = 5.0
        matrix[0, 1] = -10.0 / located.scale
        escaping = GradedOperator(matrix, seq4, seq4, 'escaping')
        report = evaluation_preimage_check(
            palette, zero, x, target, samples=0, require_origin=False, candidates=[escaping]
        )
        assert report.accepted == 1
        assert report.violations == 1
        assert not report.holds

    def test_origin_free_generators_are_skipped_by_default(self, seq4):
        palette = PaletteFamily((VPolytope([[0.0, 0.5, 0.0, 0.0]], seq4),))
        target = GaugeSublevel([(4, 1.0)], seq4, 'seminorm', strict=True)
        report = evaluation_preimage_check(
            palette, GradedOperator.zero(seq4, seq4), seq4.vector([1.0, 0.0, 0.0, 0.0]), target, samples=0
        )
        assert not report.found

    def test_origin_body_sends_x_into_the_target(self, seq4):
        x = seq4.vector([0.2, 0.0, 0.0, 0.0])
        target = GaugeSublevel([(4, 1.0)], seq4, 'seminorm', strict=True)
        report = evaluation_preimage_check(builtin_palette('FC', seq4), GradedOperator.identity(seq4), x, target)
        assert report.found
        assert report.origin_inside
        assert report.accepted > 0
        assert report.violations == 0
