import math

import numpy as np
import pytest

from frechet.errors import (
    CertificationError,
    DimensionError,
    LevelOutOfRangeError,
    NonMonotoneTowerError,
    NoWitnessError,
    ScanError,
    UncertifiedOperatorError,
)
from frechet.graded_space import FrechetMetric, GradedSpace, GradingConfig, SeminormBlock, SeminormFamily
from frechet.operators import (
    GradedOperator,
    KSetSpec,
    certify_tame,
    classical_operator_norm,
    compose_certified,
    eval_modulus,
    hausdorff_witness,
    kj_membership,
    kj_sum_check,
    nonlinear_tameness_probe,
    nontameness_scan,
    normalize_basis,
    op_norm,
    trb_limit_check,
    trb_metric,
    verify_certificate,
)
from frechet.witnesses import (
    build_normed_model,
    build_sequence_model,
    build_trig_model,
    derivative_operator,
    multiplication_operator,
)
from utils.operator_builder import scan_builder


class TestGradedOperator:
    def test_shape_must_match_models(self, seq4, trig16):
        with pytest.raises(DimensionError):
            GradedOperator(np.eye(4), seq4, trig16)

    def test_compose_checks_models(self, seq4, d16, weights4):
        with pytest.raises(DimensionError):
            d16.compose(weights4)
        square = weights4.compose(weights4)
        assert np.allclose(square.matrix, np.diag([1.0, 0.25, 0.0625, 0.015625]))
        assert square.source is seq4

    def test_apply_and_fingerprint(self, seq4, weights4):
        image = weights4.apply(seq4.vector([2.0, 2.0, 2.0, 2.0]))
        assert np.allclose(image.coords, [2.0, 1.0, 0.5, 0.25])
        assert weights4.fingerprint() == weights4.scaled(1.0).fingerprint()
        assert weights4.fingerprint() != weights4.scaled(2.0).fingerprint()


class TestOperatorNorms:
    def test_euclidean_matches_classical(self):
        space = build_normed_model(5, 'euclidean')
        matrix = np.random.default_rng(8).standard_normal((5, 5))
        A = GradedOperator(matrix, space, space)
        value = op_norm(A, 0, 0)
        assert value.is_exact
        assert value.value == pytest.approx(classical_operator_norm(A), rel=1e-12)
        assert value.value == pytest.approx(np.linalg.norm(matrix, 2), rel=1e-12)

    def test_weighted_euclidean_matches_classical(self):
        space = build_normed_model(3, 'euclidean', np.diag([1.0, 2.0, 3.0]))
        matrix = np.random.default_rng(9).standard_normal((3, 3))
        A = GradedOperator(matrix, space, space)
        assert op_norm(A, 0, 0).value == pytest.approx(classical_operator_norm(A), rel=1e-10)

    def test_max_norm_matches_row_sums(self):
        space = build_normed_model(4, 'max')
        matrix = np.random.default_rng(10).standard_normal((4, 4))
        A = GradedOperator(matrix, space, space)
        value = op_norm(A, 0, 0)
        assert value.lower <= value.upper
        assert value.upper == pytest.approx(classical_operator_norm(A), rel=1e-9)
        assert classical_operator_norm(A) == pytest.approx(np.abs(matrix).sum(axis=1).max())

    def test_diagonal_operator_is_exact(self, weights4):
        value = op_norm(weights4, 2, 2)
        assert value.is_exact
        assert value.value == pytest.approx(1.0)

    def test_kernel_makes_norm_infinite(self, kernel_space):
        swap = GradedOperator(np.array([[0.0, 1.0], [1.0, 0.0]]), kernel_space, kernel_space, 'swap')
        assert math.isinf(op_norm(swap, 0, 0).upper)
        assert op_norm(swap, 1, 0).upper <= 1.0 + 1e-9

    def test_identity_is_exact(self, seq4):
        value = op_norm(GradedOperator.identity(seq4), 2, 2)
        assert value.is_exact
        assert value.value == pytest.approx(1.0)

    def test_derivative_one_level_down(self, d16):
        value = op_norm(d16, 2, 1)
        assert value.upper <= 1.0 + 1e-9
        assert value.lower >= 1.0 - 1e-9

    def test_dyadic_levels_halve(self, seq4):
        # c(i+1) lies in c(i)/2, so ||A||_{m,n+1} >= 2||A||_{m,n} and ||A||_{m+1,n} <= ||A||_{m,n}/2
        rng = np.random.default_rng(31)
        for k in range(100):
            A = GradedOperator(rng.standard_normal((4, 4)), seq4, seq4, f"R{k}")
            norms = {
                (m, n): op_norm(A, m, n, 'dyadic', seed=k, samples=32, lp=False)
                for m in range(4)
                for n in range(4)
            }
            for m in range(3):
                for n in range(3):
                    assert 2 * norms[m, n].lower <= norms[m, n + 1].upper * (1 + 1e-9) + 1e-12
                    assert norms[m + 1, n].lower <= 0.5 * norms[m, n].upper * (1 + 1e-9) + 1e-12

    def test_unknown_variant(self, weights4):
        with pytest.raises(ValueError):
            op_norm(weights4, 0, 0, variant='spectral')


class TestCertificates:
    def test_derivative_is_one_tame(self, trig64):
        d = derivative_operator(trig64)
        cert = certify_tame(d, 1, samples=64)
        assert cert.r == 1
        assert len(cert.constants) == 8
        assert max(cert.constants) <= 1.0 + 1e-9
        assert verify_certificate(d, cert).passed

    def test_zero_operator(self, seq4):
        cert = certify_tame(GradedOperator.zero(seq4, seq4), 0)
        assert cert.constants == (0.0,) * 5

    def test_multiplication_is_zero_tame(self):
        model = build_trig_model(4, 2)
        g = multiplication_operator(model, [1.0, 0.5])
        cert = certify_tame(g, 0, samples=64)
        assert all(math.isfinite(K) for K in cert.constants)
        assert verify_certificate(g, cert).passed

    def test_invalid_arguments(self, d16):
        with pytest.raises(ValueError):
            certify_tame(d16, -1)
        with pytest.raises(LevelOutOfRangeError):
            certify_tame(d16, 1, b=8)

    def test_kernel_blocks_order_zero(self, kernel_space):
        swap = GradedOperator(np.array([[0.0, 1.0], [1.0, 0.0]]), kernel_space, kernel_space, 'swap')
        with pytest.raises(CertificationError) as excinfo:
            certify_tame(swap, 0)
        assert excinfo.value.level == 0
        cert = certify_tame(swap, 1)
        assert cert.constants[0] <= 1.0 + 1e-9

    def test_fingerprint_guards_verification(self, d16, weights4):
        cert = certify_tame(weights4, 0)
        with pytest.raises(UncertifiedOperatorError):
            verify_certificate(d16, cert)

    def test_normalize_basis(self, weights4):
        cert = certify_tame(weights4, 0, b=1)
        shifted = normalize_basis(cert)
        assert (shifted.r, shifted.b) == (1, 0)
        assert shifted.derived_from == 'basis_shift'
        assert shifted.constants[0] == cert.constant(1)

    def test_basis_shift_needs_a_monotone_tower(self):
        tower = SeminormFamily([SeminormBlock(2.0 * np.eye(2)), SeminormBlock(np.eye(2))], monotonized=False, model_id='plain2')
        plain = GradedSpace('plain2', FrechetMetric(tower, GradingConfig(n_max=1)))
        cert = certify_tame(GradedOperator.identity(plain), 0, b=1)
        assert cert.to_dict()['monotone'] is False
        with pytest.raises(NonMonotoneTowerError):
            normalize_basis(cert)

    def test_composition_dominates_direct_certificate(self, trig16, d16):
        cert = certify_tame(d16, 1, samples=64)
        product, predicted = compose_certified(d16, cert, d16, cert)
        direct = certify_tame(product, 2, samples=64)
        assert predicted.r == 2
        assert predicted.derived_from == 'composition'
        for n, K in enumerate(predicted.constants):
            assert K >= direct.constant(n) * (1 - 1e-6)

    def test_composition_of_random_diagonals(self, seq4):
        rng = np.random.default_rng(21)
        for _ in range(50):
            A = GradedOperator(np.diag(rng.uniform(-2.0, 2.0, 4)), seq4, seq4, 'A')
            B = GradedOperator(np.diag(rng.uniform(-2.0, 2.0, 4)), seq4, seq4, 'B')
            product, predicted = compose_certified(A, certify_tame(A, 0), B, certify_tame(B, 0))
            direct = certify_tame(product, 0)
            for n, K in enumerate(predicted.constants):
                assert K >= direct.constant(n) * (1 - 1e-9)

    @pytest.mark.parametrize('r, s', [(1, 1), (1, 2), (2, 1), (2, 2)])
    def test_composed_certificates_of_dense_pairs_verify(self, trig16, r, s):
        rng = np.random.default_rng(100 + 10 * r + s)
        for _ in range(2):
            A = GradedOperator(rng.standard_normal((trig16.dim, trig16.dim)), trig16, trig16, 'A')
            B = GradedOperator(rng.standard_normal((trig16.dim, trig16.dim)), trig16, trig16, 'B')
            product, cert = compose_certified(
                A, certify_tame(A, r, samples=32, lp=False), B, certify_tame(B, s, samples=32, lp=False)
            )
            assert cert.r == r + s
            assert cert.truncation == trig16.n_max - r - s
            report = verify_certificate(product, cert, samples=128)
            assert report.passed, report.violations

    def test_composition_requires_certificates(self, weights4):
        with pytest.raises(UncertifiedOperatorError):
            compose_certified(weights4, None, weights4, certify_tame(weights4, 0))


class TestTrbMetric:
    def test_needs_covering_certificates(self, weights4):
        cert = certify_tame(weights4, 1)
        with pytest.raises(UncertifiedOperatorError):
            trb_metric(weights4, weights4, 0, 0, cert, cert)
        with pytest.raises(UncertifiedOperatorError):
            trb_metric(weights4, weights4, 1, 0, None, cert)

    def test_distance_to_itself_is_zero(self, weights4):
        cert = certify_tame(weights4, 0)
        assert trb_metric(weights4, weights4, 0, 0, cert, cert) == 0.0

    def test_cauchy_sequence(self, weights4):
        sequence = [weights4.scaled(1 - 2.0 ** -k) for k in range(1, 5)]
        report = trb_limit_check(sequence, 0)
        assert report.cauchy
        assert report.distances_to_limit[-1] == 0.0
        assert list(report.increments) == sorted(report.increments, reverse=True)

    def test_eval_modulus_has_no_violations(self, d16):
        for n, r in ((2, 1), (3, 1), (3, 2)):
            cert = certify_tame(d16, r, samples=64)
            report = eval_modulus(d16, cert, n, samples=10_000, seed=5)
            assert report.directions > 0
            assert report.violations == 0

    def test_eval_modulus_level_range(self, weights4):
        cert = certify_tame(weights4, 1)
        with pytest.raises(LevelOutOfRangeError):
            eval_modulus(weights4, cert, 4)


class TestScan:
    def test_derivative_diverges(self):
        evidence = nontameness_scan(scan_builder({'operator': 'derivative', 'K': 2}), 0, [8, 16, 32, 64])
        for N, K in zip(evidence.ladder, evidence.constants):
            assert K >= N
        assert evidence.slope > 0.5
        assert evidence.verdict == 'diverging_fit'
        assert evidence.rows()[0][0] == 8

    def test_identity_stays_bounded(self):
        evidence = nontameness_scan(scan_builder({'operator': 'identity', 'K': 2}), 0, [4, 8, 16])
        assert evidence.verdict == 'bounded_fit'

    def test_geometric_diagonal_on_level_blind_grading(self):
        def build(N):
            model = build_sequence_model(N, np.ones((2, N)))
            return GradedOperator(np.diag(2.0 ** np.arange(N)), model, model, 'doubling')

        evidence = nontameness_scan(build, 0, [4, 8, 16])
        assert evidence.constants == pytest.approx((8.0, 128.0, 32768.0))
        assert evidence.verdict == 'diverging_fit'

    def test_ladder_validation(self):
        builder = scan_builder({'operator': 'derivative', 'K': 2})
        with pytest.raises(ValueError):
            nontameness_scan(builder, 0, [8, 16])
        with pytest.raises(ValueError):
            nontameness_scan(builder, 0, [8, 8, 16])

    def test_builder_failure_is_wrapped(self):
        def broken(N):
            raise RuntimeError(f"no model for {N}")

        with pytest.raises(ScanError) as excinfo:
            nontameness_scan(broken, 0, [4, 8, 16])
        assert excinfo.value.truncation == 4


class TestKSets:
    def test_spec_validation(self):
        with pytest.raises(ValueError):
            KSetSpec(j=-1)
        with pytest.raises(ValueError):
            KSetSpec(j=0, base=4)
        assert KSetSpec(j=2).value(4) == pytest.approx(1 / 16)
        assert KSetSpec(j=0, base=2).value(3) == pytest.approx(1 / 8)

    def test_small_multiple_of_identity_is_member(self, seq4):
        membership = kj_membership(GradedOperator.identity(seq4).scaled(0.01), KSetSpec(j=0))
        assert membership.member
        assert membership.witness == 1

    def test_identity_is_not_member(self, seq4):
        membership = kj_membership(GradedOperator.identity(seq4), KSetSpec(j=0))
        assert not membership.member
        assert membership.witness is None
        assert len(membership.norms) == 4

    def test_members_are_closed_under_convex_combinations(self):
        plane = build_normed_model(3, 'euclidean')
        spec = KSetSpec(j=1)
        assert spec.is_ascending(plane.metric.dyadic_max)
        rng = np.random.default_rng(41)
        violations = 0
        for trial in range(1000):
            pair = []
            for _ in range(2):
                R = rng.standard_normal((3, 3))
                pair.append(GradedOperator(rng.uniform(0.1, 20.0) * R / np.linalg.norm(R, 2), plane, plane))
            A, B = pair
            assert kj_membership(A, spec, seed=trial, samples=16).member
            assert kj_membership(B, spec, seed=trial, samples=16).member
            theta = rng.uniform()
            if not kj_membership(A.scaled(theta) + B.scaled(1 - theta), spec, seed=trial, samples=16).member:
                violations += 1
        assert violations == 0

    def test_sum_of_finer_members(self, seq4):
        small = GradedOperator.identity(seq4).scaled(0.001)
        report = kj_sum_check([(small, small)], KSetSpec(j=0))
        assert report.checked == 1
        assert report.violations == 0

    def test_hausdorff_witness_for_derivative(self, d16):
        witness = hausdorff_witness(d16)
        spec = KSetSpec(j=witness.j, base=2)
        assert witness.n_scale >= 1
        assert all(bound > spec.value(i) for i, bound in witness.lower_bounds)

    def test_hausdorff_multiple_leaves_k_j(self, d16):
        witness = hausdorff_witness(d16)
        assert not kj_membership(d16.scaled(witness.n_scale), KSetSpec(witness.j, base=2)).member

    def test_doubling_at_most_halves_the_multiple(self, d16):
        witness = hausdorff_witness(d16)
        doubled = hausdorff_witness(d16.scaled(2.0))
        assert doubled.j == witness.j
        assert doubled.n_scale <= witness.n_scale
        assert 2 * doubled.n_scale >= witness.n_scale

    @pytest.mark.parametrize('i, j', [(2, 0), (3, 1), (4, 2), (6, 2), (8, 4)])
    def test_small_multiple_of_derivative_enters_k_j(self, d16, i, j):
        spec = KSetSpec(j, base=2)
        norm = op_norm(d16, i, j, 'dyadic', samples=32, lp=False)
        assert math.isfinite(norm.upper)
        membership = kj_membership(d16.scaled(0.5 * spec.value(i) / norm.upper), spec, samples=32, lp=False)
        assert membership.member
        assert membership.witness <= i

    @pytest.mark.parametrize('j', [0, 2, 4])
    def test_large_multiple_of_derivative_stays_outside_k_j(self, d16, j):
        spec = KSetSpec(j, base=2)
        lowers = [op_norm(d16, i, j, 'dyadic', samples=32, lp=False).lower for i in range(1, 9)]
        assert min(lowers) > 0
        scale = 2.0 * max(spec.value(i) / lower for i, lower in enumerate(lowers, start=1))
        membership = kj_membership(d16.scaled(scale), spec, samples=32, lp=False)
        assert not membership.member
        assert all(value.lower >= spec.value(i) for i, value in membership.norms)

    def test_zero_operator_has_no_witness(self, trig16):
        with pytest.raises(NoWitnessError):
            hausdorff_witness(GradedOperator.zero(trig16, trig16))


class TestNonlinearProbe:
    def test_linear_map_is_bounded(self, scalar_line):
        result = nonlinear_tameness_probe(lambda x: 2.0 * x, scalar_line.zero(), 0, 'homogeneous', scalar_line, scalar_line)
        assert result.constants == pytest.approx((2.0,))
        assert result.bounded

    def test_cube_root_depends_on_form(self, scalar_line):
        u = scalar_line.vector([0.0])
        homogeneous = nonlinear_tameness_probe(np.cbrt, u, 0, 'homogeneous', scalar_line, scalar_line)
        additive = nonlinear_tameness_probe(np.cbrt, u, 0, 'additive_one', scalar_line, scalar_line)
        assert not homogeneous.bounded
        assert homogeneous.growth > 1e4
        assert additive.bounded
        assert math.isfinite(max(additive.constants))

    def test_unknown_form(self, scalar_line):
        with pytest.raises(ValueError):
            nonlinear_tameness_probe(np.cbrt, scalar_line.zero(), 0, 'quadratic', scalar_line, scalar_line)
