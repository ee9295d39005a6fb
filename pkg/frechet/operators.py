import hashlib
import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import eigh
from scipy.optimize import linprog

from frechet.errors import (
    CertificationError,
    DimensionError,
    LevelOutOfRangeError,
    NoWitnessError,
    NonMonotoneTowerError,
    ScanError,
    UncertifiedOperatorError,
)
from frechet.graded_space import (
    DEFAULT_TOLERANCE,
    GaugeValue,
    GradedSpace,
    GradedVector,
    cylinder_gauge,
    make_rng,
)

logger = logging.getLogger(__name__)

VARIANTS = ('hamilton', 'dyadic')
PROBE_FORMS = ('additive_one', 'homogeneous')
DIVERGENCE_SLOPE = 0.5
MATCH_TOLERANCE = 1e-12
REPRESENTATION_TOLERANCE = 1e-8
ZERO_TOLERANCE = 1e-12


def same_space(a: GradedSpace, b: GradedSpace) -> bool:
    return a.model_id == b.model_id and a.dim == b.dim


@dataclass(frozen=True, eq=False)
class GradedOperator:
    """Linear map between two models; ``matrix`` has shape (target dim, source dim)."""
    matrix: np.ndarray
    source: GradedSpace
    target: GradedSpace
    name: str = 'A'

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=float, ndmin=2)
        if not np.all(np.isfinite(matrix)):
            raise ValueError(f"Operator {self.name} has non-finite entries")
        if matrix.shape != (self.target.dim, self.source.dim):
            raise DimensionError(
                f"Operator {self.name} has shape {matrix.shape}, "
                f"expected {(self.target.dim, self.source.dim)} for {self.source.model_id} -> {self.target.model_id}"
            )
        matrix.setflags(write=False)
        object.__setattr__(self, 'matrix', matrix)

    @classmethod
    def identity(cls, space: GradedSpace, name: str = 'I') -> 'GradedOperator':
        return cls(np.eye(space.dim), space, space, name)

    @classmethod
    def zero(cls, source: GradedSpace, target: GradedSpace, name: str = '0') -> 'GradedOperator':
        return cls(np.zeros((target.dim, source.dim)), source, target, name)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.matrix)

    def apply(self, v: GradedVector) -> GradedVector:
        if v.model_id != self.source.model_id:
            raise DimensionError(f"{self.name} acts on {self.source.model_id}, got a vector of {v.model_id}")
        return self.target.vector(self.matrix @ v.coords)

    def images(self, coords: np.ndarray) -> np.ndarray:
        return np.asarray(coords, dtype=float) @ self.matrix.T

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(f"{self.source.model_id}->{self.target.model_id}:{self.matrix.shape}".encode())
        digest.update(np.ascontiguousarray(self.matrix).tobytes())
        return digest.hexdigest()[:16]

    def _check_parallel(self, other: 'GradedOperator'):
        if not (same_space(self.source, other.source) and same_space(self.target, other.target)):
            raise DimensionError(f"{self.name} and {other.name} act between different models")

    def scaled(self, factor: float, name: Optional[str] = None) -> 'GradedOperator':
        return GradedOperator(float(factor) * self.matrix, self.source, self.target, name or f"{factor:g}*{self.name}")

    def __add__(self, other: 'GradedOperator') -> 'GradedOperator':
        self._check_parallel(other)
        return GradedOperator(self.matrix + other.matrix, self.source, self.target, f"{self.name}+{other.name}")

    def __sub__(self, other: 'GradedOperator') -> 'GradedOperator':
        self._check_parallel(other)
        return GradedOperator(self.matrix - other.matrix, self.source, self.target, f"{self.name}-{other.name}")

    def compose(self, inner: 'GradedOperator') -> 'GradedOperator':
        """self after inner."""
        if not same_space(inner.target, self.source):
            raise DimensionError(f"Cannot compose {self.name} on {self.source.model_id} after a map into {inner.target.model_id}")
        return GradedOperator(self.matrix @ inner.matrix, inner.source, self.target, f"{self.name}*{inner.name}")


@dataclass(frozen=True, eq=False)
class NormResult:
    gauge: GaugeValue
    witness: Optional[np.ndarray] = None


def _ratios(A: GradedOperator, m: int, n: int, candidates: np.ndarray) -> np.ndarray:
    """||A c||_n / ||c||_m with kernel candidates mapped to 0 or +inf."""
    src_tower, tgt_tower = A.source.tower, A.target.tower
    src = np.atleast_1d(src_tower.evaluate(candidates, m))
    img = np.atleast_1d(tgt_tower.evaluate(A.images(candidates), n))
    size = np.linalg.norm(candidates, axis=1)
    src_zero = src <= ZERO_TOLERANCE * np.linalg.norm(src_tower.stacked_matrix(m)) * size
    img_zero = img <= ZERO_TOLERANCE * np.linalg.norm(tgt_tower.stacked_matrix(n) @ A.matrix) * size
    with np.errstate(divide='ignore', invalid='ignore'):
        ratios = np.where(src_zero, np.where(img_zero, 0.0, np.inf), img / np.where(src_zero, 1.0, src))
    return np.where(img_zero & ~src_zero, 0.0, ratios)


def _candidates(A: GradedOperator, m: int, rng: np.random.Generator, samples: int) -> np.ndarray:
    dim = A.source.dim
    parts = [np.eye(dim), rng.standard_normal((samples, dim))]
    kernel = A.source.tower.kernel(m)
    if kernel.shape[1]:
        parts.append(kernel.T)
    _, _, vt = np.linalg.svd(A.matrix, full_matrices=False)
    parts.append(vt[:3])
    return np.vstack(parts)


def _euclidean_exact(source_form: np.ndarray, T: np.ndarray) -> Tuple[float, np.ndarray]:
    """Largest generalized singular value sup ||T v|| / ||L v||."""
    eigenvalues, vectors = eigh(source_form.T @ source_form)
    cutoff = 1e-12 * max(float(eigenvalues[-1]), np.finfo(float).tiny)
    kept = eigenvalues > cutoff
    kernel = vectors[:, ~kept]
    if kernel.shape[1]:
        leak = np.linalg.norm(T @ kernel, axis=0)
        if leak.max() > 1e-10 * max(1.0, np.linalg.norm(T)):
            return math.inf, kernel[:, int(np.argmax(leak))]
    whitening = vectors[:, kept] / np.sqrt(eigenvalues[kept])
    _, singular, vt = np.linalg.svd(T @ whitening, full_matrices=False)
    if singular.size == 0:
        return 0.0, None
    return float(singular[0]), whitening @ vt[0]


def _row_match(T: np.ndarray, norms: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Bound |c| for rows of T that are exact multiples c * b of a row of B."""
    bounds = np.full(T.shape[0], np.inf)
    row_norms = np.linalg.norm(B, axis=1)
    usable = row_norms > 0
    live = norms > 0
    if not usable.any() or not live.any():
        return bounds
    units = B[usable] / row_norms[usable, None]
    cosines = np.abs(T[live] @ units.T) / norms[live, None]
    best = np.argmax(cosines, axis=1)
    scale = norms[live] / row_norms[usable][best]
    signs = np.sign((T[live] * units[best]).sum(axis=1))
    residual = np.linalg.norm(T[live] - (signs * norms[live])[:, None] * units[best], axis=1)
    matched = (cosines[np.arange(len(best)), best] >= 1 - MATCH_TOLERANCE) & (residual <= MATCH_TOLERANCE * norms[live])
    bounds[np.flatnonzero(live)[matched]] = scale[matched]
    return bounds


def _row_bounds(T: np.ndarray, source_blocks) -> np.ndarray:
    """Upper bounds of sup |t . v| over the unit ball of the source level, per row t of T."""
    norms = np.linalg.norm(T, axis=1)
    bounds = np.where(norms == 0, 0.0, np.inf)
    for block in source_blocks:
        B = block.matrix
        Y = T @ np.linalg.pinv(B)
        residual = np.linalg.norm(Y @ B - T, axis=1)
        consistent = residual <= REPRESENTATION_TOLERANCE * np.maximum(1.0, norms)
        dual = np.abs(Y).sum(axis=1) if block.kind == 'max' else np.linalg.norm(Y, axis=1)
        bounds = np.where(consistent, np.minimum(bounds, dual), bounds)
        if block.kind == 'max':
            bounds = np.minimum(bounds, _row_match(T, norms, B))
    return bounds


def _euclidean_block_bound(T: np.ndarray, source_blocks) -> float:
    best = 0.0 if not np.any(T) else math.inf
    for block in source_blocks:
        B = block.matrix
        Y = T @ np.linalg.pinv(B)
        if np.linalg.norm(Y @ B - T) > REPRESENTATION_TOLERANCE * max(1.0, np.linalg.norm(T)):
            continue
        factor = 1.0 if block.kind == 'euclidean' else math.sqrt(block.rows)
        best = min(best, factor * float(np.linalg.norm(Y, 2)))
    return best


def _row_lp(t: np.ndarray, S: np.ndarray) -> Tuple[float, Optional[np.ndarray]]:
    """Exact sup of t . v over |S v| <= 1."""
    result = linprog(
        -t,
        A_ub=np.vstack([S, -S]),
        b_ub=np.ones(2 * S.shape[0]),
        bounds=(None, None),
        method='highs',
    )
    if result.status == 3:
        return math.inf, None
    if result.status != 0:
        return math.nan, None
    return float(-result.fun), result.x


def _hamilton_norm(
    A: GradedOperator,
    m: int,
    n: int,
    seed: int = 0,
    samples: int = 256,
    lp: bool = True,
    compute_upper: bool = True,
    tolerance: float = DEFAULT_TOLERANCE,
    lp_row_limit: int = 512,
) -> NormResult:
    src_tower, tgt_tower = A.source.tower, A.target.tower
    src_tower.check_level(m)
    tgt_tower.check_level(n)
    if A.is_zero:
        return NormResult(GaugeValue.exact(0.0, tolerance))

    if compute_upper and src_tower.level_kind(m) == 'euclidean' and tgt_tower.level_kind(n) == 'euclidean':
        value, witness = _euclidean_exact(src_tower.stacked_matrix(m), tgt_tower.stacked_matrix(n) @ A.matrix)
        if math.isinf(value):
            return NormResult(GaugeValue(math.inf, math.inf, 'lower', tolerance), witness)
        return NormResult(GaugeValue.exact(value, tolerance), witness)

    rng = make_rng(seed, stream=100 + 1009 * m + n)
    candidates = _candidates(A, m, rng, samples)
    ratios = _ratios(A, m, n, candidates)
    best = int(np.argmax(ratios))
    lower, witness = float(ratios[best]), candidates[best]
    if math.isinf(lower):
        return NormResult(GaugeValue(math.inf, math.inf, 'lower', tolerance), witness)
    if not compute_upper:
        return NormResult(GaugeValue(lower, math.inf, 'bracket', tolerance), witness)

    source_blocks = src_tower.level_blocks(m)
    upper = 0.0
    rows, row_bounds = [], []
    for block in tgt_tower.level_blocks(n):
        T = block.matrix @ A.matrix
        if block.kind == 'euclidean':
            upper = max(upper, _euclidean_block_bound(T, source_blocks))
        else:
            bounds = _row_bounds(T, source_blocks)
            rows.append(T)
            row_bounds.append(bounds)
            upper = max(upper, float(bounds.max()))

    refinable = (
        lp
        and rows
        and len(rows) == len(tgt_tower.level_blocks(n))
        and all(block.kind == 'max' for block in source_blocks)
    )
    if refinable and upper - lower > tolerance * max(1.0, upper):
        T = np.vstack(rows)
        bounds = np.concatenate(row_bounds)
        S = src_tower.stacked_matrix(m)
        exact_max, remaining = 0.0, 0.0
        solved = 0
        for idx in np.argsort(-bounds):
            threshold = max(exact_max, lower) * (1 + tolerance) + tolerance
            if bounds[idx] <= threshold or solved >= lp_row_limit:
                remaining = max(remaining, float(bounds[idx]))
                if bounds[idx] <= threshold:
                    break
                continue
            value, x = _row_lp(T[idx], S)
            solved += 1
            if math.isnan(value):
                remaining = max(remaining, float(bounds[idx]))
                continue
            if math.isinf(value):
                return NormResult(GaugeValue(math.inf, math.inf, 'lower', tolerance), witness)
            exact_max = max(exact_max, value)
            ratio = float(_ratios(A, m, n, x[None, :])[0])
            if ratio > lower:
                lower, witness = ratio, x
        upper = max(exact_max, remaining, lower)
        logger.debug(f"Row LPs for {A.name} ({m}->{n}): {solved} solved, upper {upper:.6g}")

    return NormResult(GaugeValue.bracket(lower, upper, tolerance), witness)


def _top_hamilton_uppers(A: GradedOperator, seed: int, samples: int, lp: bool) -> np.ndarray:
    """H_k: upper bounds of sup ||A x||_top / ||x||_k for every source level k."""
    tgt = A.target.tower
    top_levels = [tgt.n_max] if tgt.monotonized else list(range(tgt.n_max + 1))
    uppers = np.zeros(A.source.tower.n_max + 1)
    if A.is_zero:
        return uppers
    for k in range(A.source.tower.n_max + 1):
        uppers[k] = max(
            _hamilton_norm(A, k, j, seed=seed, samples=samples, lp=lp).gauge.upper
            for j in top_levels
        )
    return uppers


def _dyadic_upper(A: GradedOperator, m: int, n: int, uppers: np.ndarray, fixed_level: bool = False) -> float:
    """Upper bound of mu_n(A(c(m))) through the outer cylinder of B_{2^-m} and the inner ball of B_{2^-n}."""
    if A.is_zero:
        return 0.0
    cylinder = A.source.metric.outer_cylinder(2.0 ** -m)
    sigma = A.target.metric.inner_radius(2.0 ** -n)
    if math.isinf(sigma):
        return 0.0
    if not cylinder:
        return math.inf
    if fixed_level:
        cylinder = cylinder[-1:]
    return min(rho * uppers[k] / sigma if uppers[k] > 0 else 0.0 for k, rho in cylinder)


def _dyadic_lower(A: GradedOperator, m: int, n: int, rng: np.random.Generator, samples: int) -> Tuple[float, Optional[np.ndarray]]:
    src_metric, tgt_metric = A.source.metric, A.target.metric
    dim = A.source.dim
    _, _, vt = np.linalg.svd(A.matrix, full_matrices=False)
    directions = np.vstack([np.eye(dim), rng.standard_normal((samples, dim)), vt[:3]])
    s = np.atleast_1d(src_metric.ray_radius(A.source.tower.profile(directions), 2.0 ** -m))
    finite = np.isfinite(s)
    cylinder = tgt_metric.outer_cylinder(2.0 ** -n)

    lower, witness = 0.0, None
    if (~finite).any():
        lines = A.images(directions[~finite])
        line_gauges = cylinder_gauge(A.target.tower.profile(lines), cylinder)
        if np.any(line_gauges > 0):
            return math.inf, directions[~finite][int(np.argmax(line_gauges))]
    if finite.any():
        points = s[finite, None] * directions[finite]
        gauges = cylinder_gauge(A.target.tower.profile(A.images(points)), cylinder)
        best = int(np.argmax(gauges))
        lower, witness = float(gauges[best]), points[best]
    return lower, witness


def _dyadic_norm(
    A: GradedOperator,
    m: int,
    n: int,
    seed: int = 0,
    samples: int = 256,
    lp: bool = False,
    tolerance: float = DEFAULT_TOLERANCE,
    uppers: Optional[np.ndarray] = None,
) -> NormResult:
    A.source.metric.check_dyadic(m)
    A.target.metric.check_dyadic(n)
    if A.is_zero:
        return NormResult(GaugeValue.exact(0.0, tolerance))
    if uppers is None:
        uppers = _top_hamilton_uppers(A, seed, samples, lp)
    rng = make_rng(seed, stream=200 + 1009 * m + n)
    lower, witness = _dyadic_lower(A, m, n, rng, samples)
    upper = max(_dyadic_upper(A, m, n, uppers), lower)
    return NormResult(GaugeValue.bracket(lower, upper, tolerance), witness)


def op_norm(
    A: GradedOperator,
    m: int,
    n: int,
    variant: str = 'hamilton',
    seed: int = 0,
    samples: int = 256,
    lp: bool = True,
    tolerance: float = DEFAULT_TOLERANCE,
) -> GaugeValue:
    """Graded operator norm from source level m to target level n.

    ``hamilton`` is sup ||A v||_n over ||v||_m <= 1; ``dyadic`` is
    mu_n(A(c(m))) with c(m) the closed convex hull of B_{2^-m}.
    """
    if variant == 'hamilton':
        return _hamilton_norm(A, m, n, seed, samples, lp, True, tolerance).gauge
    if variant == 'dyadic':
        return _dyadic_norm(A, m, n, seed, samples, lp, tolerance).gauge
    raise ValueError(f"Unknown norm variant '{variant}', expected one of {VARIANTS}")


def classical_operator_norm(A: GradedOperator) -> float:
    """Operator norm between single-level normed models."""
    src, tgt = A.source.tower, A.target.tower
    if src.n_max != 0 or tgt.n_max != 0 or len(src.blocks) != 1 or len(tgt.blocks) != 1:
        raise DimensionError("The classical operator norm needs single-level models")
    source_block, target_block = src.blocks[0], tgt.blocks[0]
    if source_block.kind != target_block.kind:
        raise DimensionError("Source and target norms must be of the same kind")
    transfer = target_block.matrix @ A.matrix @ np.linalg.pinv(source_block.matrix)
    return float(np.linalg.norm(transfer, 2 if source_block.kind == 'euclidean' else np.inf))


@dataclass(frozen=True)
class TamenessCertificate:
    """r-tame with basis b: ||A v||_n <= K_n ||v||_{n+r} for n in [b, truncation]."""
    r: int
    b: int
    constants: Tuple[float, ...]
    variant: str
    truncation: int
    backend: str
    seed: int = 0
    fingerprint: str = ''
    tolerance: float = DEFAULT_TOLERANCE
    lower_bounds: Tuple[float, ...] = ()
    derived_from: Optional[str] = None
    monotone: bool = True

    @property
    def levels(self) -> range:
        return range(self.b, self.b + len(self.constants))

    def constant(self, n: int) -> float:
        if n not in self.levels:
            raise LevelOutOfRangeError(n, self.truncation)
        return self.constants[n - self.b]

    def covers(self, r: int, b: int) -> bool:
        """Membership in T_{r,b} follows from this certificate."""
        return self.r <= r and self.b <= b

    def to_dict(self) -> dict:
        data = {
            'r': self.r,
            'b': self.b,
            'K': list(self.constants),
            'variant': self.variant,
            'truncation': self.truncation,
            'backend': self.backend,
            'seed': self.seed,
            'fingerprint': self.fingerprint,
            'tolerance': self.tolerance,
        }
        if self.lower_bounds:
            data['K_lower'] = list(self.lower_bounds)
        if self.derived_from:
            data['derived_from'] = self.derived_from
        if not self.monotone:
            data['monotone'] = False
        return data


def _certificate_top(A: GradedOperator, r: int, variant: str) -> int:
    if variant == 'hamilton':
        return min(A.target.n_max, A.source.n_max - r)
    return min(A.target.metric.dyadic_max, A.source.metric.dyadic_max - r)


@dataclass(frozen=True)
class VerificationReport:
    passed: bool
    checked: int
    violations: Tuple[Tuple[int, float], ...]
    worst_ratio: float


def verify_certificate(A: GradedOperator, cert: TamenessCertificate, seed: Optional[int] = None, samples: int = 256) -> VerificationReport:
    """Re-check a certificate on fresh samples."""
    if cert.fingerprint and cert.fingerprint != A.fingerprint():
        raise UncertifiedOperatorError(f"Certificate {cert.fingerprint} does not belong to {A.name}")
    rng = make_rng(cert.seed + 1 if seed is None else seed, stream=7)
    violations: List[Tuple[int, float]] = []
    worst, checked = 0.0, 0

    for n in cert.levels:
        K = cert.constant(n)
        slack = K * (1 + cert.tolerance) + cert.tolerance
        if cert.variant == 'hamilton':
            candidates = np.vstack([np.eye(A.source.dim), rng.standard_normal((samples, A.source.dim))])
            values = _ratios(A, n + cert.r, n, candidates)
        else:
            directions = rng.standard_normal((samples, A.source.dim))
            s = np.atleast_1d(A.source.metric.ray_radius(A.source.tower.profile(directions), 2.0 ** -(n + cert.r)))
            points = np.where(np.isfinite(s), s, 1.0)[:, None] * directions
            values = cylinder_gauge(A.target.tower.profile(A.images(points)), A.target.metric.outer_cylinder(2.0 ** -n))
            values = np.where(np.isfinite(s) | (values == 0), values, np.inf)
        checked += len(values)
        level_worst = float(np.max(values)) if len(values) else 0.0
        if K > 0:
            worst = max(worst, level_worst / K)
        elif level_worst > 0:
            worst = math.inf
        if level_worst > slack:
            violations.append((n, level_worst))

    if violations:
        logger.warning(f"Certificate for {A.name} failed re-check at levels {[v[0] for v in violations]}")
    return VerificationReport(not violations, checked, tuple(violations), worst)


def certify_tame(
    A: GradedOperator,
    r: int,
    b: int = 0,
    variant: str = 'hamilton',
    seed: int = 0,
    samples: int = 256,
    lp: bool = True,
    tolerance: float = DEFAULT_TOLERANCE,
    verify: bool = True,
) -> TamenessCertificate:
    """Compute K_n = ||A||_{n+r -> n} for n in [b, N] and re-check the result."""
    if variant not in VARIANTS:
        raise ValueError(f"Unknown norm variant '{variant}'")
    if r < 0 or b < 0:
        raise ValueError(f"Tameness order and basis must be nonnegative, got r={r}, b={b}")
    top = _certificate_top(A, r, variant)
    if b > top:
        raise LevelOutOfRangeError(b + r, A.source.n_max, what='basis plus order')

    uppers = _top_hamilton_uppers(A, seed, samples, lp) if variant == 'dyadic' else None
    constants, lowers = [], []
    exact = variant == 'hamilton'
    for n in range(b, top + 1):
        if variant == 'hamilton':
            value = _hamilton_norm(A, n + r, n, seed, samples, lp, True, tolerance).gauge
            exact = (
                exact
                and value.is_exact
                and A.source.tower.level_kind(n + r) == 'euclidean'
                and A.target.tower.level_kind(n) == 'euclidean'
            )
        else:
            value = _dyadic_norm(A, n + r, n, seed, samples, lp, tolerance, uppers).gauge
        if math.isinf(value.upper):
            raise CertificationError(f"{A.name} has no finite {variant} constant at order {r}", level=n)
        constants.append(value.upper)
        lowers.append(value.lower)
        logger.debug(f"{A.name}: K_{n} in [{value.lower:.6g}, {value.upper:.6g}]")

    cert = TamenessCertificate(
        r=r,
        b=b,
        constants=tuple(constants),
        variant=variant,
        truncation=top,
        backend='exact_euclidean' if exact else 'sampled',
        seed=seed,
        fingerprint=A.fingerprint(),
        tolerance=tolerance,
        lower_bounds=tuple(lowers),
        monotone=A.source.tower.monotonized and A.target.tower.monotonized,
    )
    if verify:
        report = verify_certificate(A, cert, samples=samples)
        if not report.passed:
            raise CertificationError(f"{A.name} certificate failed its re-check", level=report.violations[0][0])
    logger.info(f"Certified {A.name} as {r}-tame with basis {b} ({variant}, {cert.backend}, N={top})")
    return cert


def normalize_basis(cert: TamenessCertificate) -> TamenessCertificate:
    """Turn an r-tame certificate with basis b into an (r+b)-tame one with basis 0.

    Levels below b reuse K_b, which needs both towers increasing in n; the
    dyadic variant rides on the nested balls instead.
    """
    if cert.b == 0:
        return cert
    if cert.variant == 'hamilton' and not cert.monotone:
        raise NonMonotoneTowerError(f"Cannot shift basis {cert.b} to 0 on a tower that is not monotonized")
    b = cert.b
    top = cert.truncation - b
    constants = []
    for n in range(0, top + 1):
        K = cert.constant(max(n, b))
        constants.append(K * 2.0 ** -b if cert.variant == 'dyadic' else K)
    return replace(
        cert,
        r=cert.r + b,
        b=0,
        constants=tuple(constants),
        truncation=top,
        lower_bounds=(),
        derived_from='basis_shift',
    )


def _require_certificate(A: GradedOperator, cert: Optional[TamenessCertificate]):
    if cert is None:
        raise UncertifiedOperatorError(f"{A.name} has no tameness certificate")
    if cert.fingerprint and cert.fingerprint != A.fingerprint():
        raise UncertifiedOperatorError(f"Certificate {cert.fingerprint} does not belong to {A.name}")


def compose_certified(
    A: GradedOperator,
    cert_A: TamenessCertificate,
    B: GradedOperator,
    cert_B: TamenessCertificate,
) -> Tuple[GradedOperator, TamenessCertificate]:
    """Certificate of B after A from the two factors; the orders add up."""
    _require_certificate(A, cert_A)
    _require_certificate(B, cert_B)
    if not same_space(A.target, B.source):
        raise DimensionError(f"{A.name} maps into {A.target.model_id} but {B.name} starts on {B.source.model_id}")
    if cert_A.variant != cert_B.variant:
        raise ValueError("Cannot compose certificates of different variants")

    norm_A, norm_B = normalize_basis(cert_A), normalize_basis(cert_B)
    product = B.compose(A)
    constants = []
    n = 0
    while n <= norm_B.truncation and n + norm_B.r <= norm_A.truncation:
        constants.append(norm_B.constant(n) * norm_A.constant(n + norm_B.r))
        n += 1
    if not constants:
        raise CertificationError(f"Composition {product.name} leaves no certified level at this truncation")

    backend = 'exact_euclidean' if norm_A.backend == norm_B.backend == 'exact_euclidean' else 'sampled'
    cert = TamenessCertificate(
        r=norm_A.r + norm_B.r,
        b=0,
        constants=tuple(constants),
        variant=cert_A.variant,
        truncation=len(constants) - 1,
        backend=backend,
        seed=cert_A.seed,
        fingerprint=product.fingerprint(),
        tolerance=max(cert_A.tolerance, cert_B.tolerance),
        derived_from='composition',
        monotone=norm_A.monotone and norm_B.monotone,
    )
    logger.info(f"Composed {product.name}: order {cert.r}, {len(constants)} levels")
    return product, cert


def _trb_terms(D: GradedOperator, r: int, b: int, seed: int, samples: int, lp: bool) -> List[Tuple[int, float]]:
    """Fixed-level upper bounds of mu_M(D(c(M+r))) for M >= b."""
    top = min(D.target.n_max, D.target.metric.dyadic_max, D.source.metric.dyadic_max - r)
    uppers = _top_hamilton_uppers(D, seed, samples, lp)
    return [(M, _dyadic_upper(D, M + r, M, uppers, fixed_level=True)) for M in range(b, top + 1)]


def _trb_value(target: GradedSpace, terms: List[Tuple[int, float]], scale: float = 1.0) -> float:
    config = target.metric.config
    return float(sum(config.weights[M] * config.phi(scale * value) for M, value in terms))


def trb_metric(
    A: GradedOperator,
    B: GradedOperator,
    r: int,
    b: int,
    cert_A: Optional[TamenessCertificate],
    cert_B: Optional[TamenessCertificate],
    seed: int = 0,
    samples: int = 256,
    lp: bool = True,
) -> float:
    """Frechet metric of T_{r,b}: sum over M >= b of w_M phi(mu_M((A-B)(c(M+r))))."""
    for operator, cert in ((A, cert_A), (B, cert_B)):
        _require_certificate(operator, cert)
        if not cert.covers(r, b):
            raise UncertifiedOperatorError(
                f"{operator.name} is certified {cert.r}-tame with basis {cert.b}, not in T_({r},{b})"
            )
    difference = A - B
    return _trb_value(A.target, _trb_terms(difference, r, b, seed, samples, lp))


@dataclass(frozen=True)
class CompletenessReport:
    increments: Tuple[float, ...]
    distances_to_limit: Tuple[float, ...]
    cauchy: bool
    limit_certificate: TamenessCertificate


def trb_limit_check(sequence: Sequence[GradedOperator], r: int, b: int = 0, seed: int = 0, samples: int = 128) -> CompletenessReport:
    """Cauchy sequence in T_{r,b} at truncation: increments, distances to the last element, certified limit."""
    if len(sequence) < 2:
        raise ValueError("Need at least two operators")
    certs = [certify_tame(A, r, b, seed=seed, samples=samples) for A in sequence]
    limit, limit_cert = sequence[-1], certs[-1]
    increments = tuple(
        trb_metric(sequence[k], sequence[k + 1], r, b, certs[k], certs[k + 1], seed, samples)
        for k in range(len(sequence) - 1)
    )
    distances = tuple(
        trb_metric(A, limit, r, b, cert, limit_cert, seed, samples)
        for A, cert in zip(sequence, certs)
    )
    tails = np.cumsum(np.asarray(increments)[::-1])[::-1]
    cauchy = bool(np.all(np.asarray(distances[:-1]) <= tails + 1e-9))
    return CompletenessReport(increments, distances, cauchy, limit_cert)


@dataclass(frozen=True, eq=False)
class DivergenceEvidence:
    ladder: Tuple[int, ...]
    constants: Tuple[float, ...]
    slope: float
    verdict: str
    witnesses: Tuple[np.ndarray, ...]
    r: int
    level: int
    seed: int

    def rows(self) -> List[Tuple[int, float, float]]:
        return [(N, K, self.slope) for N, K in zip(self.ladder, self.constants)]

    def to_dict(self) -> dict:
        return {
            'ladder': list(self.ladder),
            'K': list(self.constants),
            'slope': self.slope,
            'verdict': self.verdict,
            'r': self.r,
            'level': self.level,
            'seed': self.seed,
        }


def nontameness_scan(
    builder: Callable[[int], GradedOperator],
    r: int,
    ladder: Sequence[int],
    level: int = 0,
    seed: int = 0,
    samples: int = 64,
    threshold: float = DIVERGENCE_SLOPE,
) -> DivergenceEvidence:
    """Lower bounds of K_level across truncations and a log-log growth fit."""
    ladder = tuple(int(N) for N in ladder)
    if len(ladder) < 3:
        raise ValueError("A divergence scan needs at least three truncations")
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise ValueError("Scan ladder must be strictly increasing")

    constants, witnesses = [], []
    for N in ladder:
        try:
            A = builder(N)
        except Exception as e:
            raise ScanError(N, e) from e
        result = _hamilton_norm(A, level + r, level, seed=seed, samples=samples, compute_upper=False)
        constants.append(result.gauge.lower)
        witnesses.append(result.witness)
        logger.debug(f"Scan N={N}: K_{level} >= {result.gauge.lower:.6g}")

    K = np.asarray(constants)
    if np.any(np.isinf(K)):
        slope = math.inf
    elif not np.any(K > 0):
        slope = 0.0
    else:
        slope = float(np.polyfit(np.log(ladder), np.log(np.maximum(K, 1e-300)), 1)[0])
    verdict = 'diverging_fit' if slope > threshold else 'bounded_fit'
    logger.info(f"Scan over {ladder}: slope {slope:.3f} -> {verdict}")
    return DivergenceEvidence(ladder, tuple(constants), slope, verdict, tuple(witnesses), r, level, seed)


@dataclass(frozen=True)
class KSetSpec:
    """Sublevel family K^a_{i,j} = {A : ||A||_{i,j} < a(i,j)} at target level j.

    Default a(i,j) = i^-j; with ``base`` the geometric family a(i,j) = base^-i.
    """
    j: int
    base: Optional[int] = None
    a: Optional[Callable[[int, int], float]] = None

    def __post_init__(self):
        if self.j < 0:
            raise ValueError(f"Level j must be nonnegative, got {self.j}")
        if self.base is not None and self.base not in (2, 3):
            raise ValueError(f"Geometric base must be 2 or 3, got {self.base}")

    def value(self, i: int, j: Optional[int] = None) -> float:
        j = self.j if j is None else j
        if self.a is not None:
            return float(self.a(i, j))
        if self.base is not None:
            return float(self.base) ** -i
        return float(i) ** -j

    def is_ascending(self, i_max: int) -> bool:
        return all(self.value(i + 1) >= self.value(i) / 2 for i in range(1, i_max))


@dataclass(frozen=True)
class KMembership:
    member: bool
    witness: Optional[int]
    norms: Tuple[Tuple[int, GaugeValue], ...]


def kj_membership(A: GradedOperator, spec: KSetSpec, seed: int = 0, samples: int = 128, lp: bool = True) -> KMembership:
    """Smallest i with ||A||_{i,j} < a(i,j), searching i = 1..N."""
    A.target.metric.check_dyadic(spec.j)
    uppers = _top_hamilton_uppers(A, seed, samples, lp)
    norms = []
    for i in range(1, A.source.metric.dyadic_max + 1):
        value = _dyadic_norm(A, i, spec.j, seed, samples, lp, uppers=uppers).gauge
        norms.append((i, value))
        if value.upper < spec.value(i):
            return KMembership(True, i, tuple(norms))
    return KMembership(False, None, tuple(norms))


@dataclass(frozen=True)
class KSumReport:
    checked: int
    violations: int


def kj_sum_check(pairs: Sequence[Tuple[GradedOperator, GradedOperator]], spec: KSetSpec, seed: int = 0, samples: int = 64) -> KSumReport:
    """Sampled check of K_{j+1} + K_{j+1} inside K_j."""
    finer = replace(spec, j=spec.j + 1)
    checked = violations = 0
    for A, B in pairs:
        if not (kj_membership(A, finer, seed, samples).member and kj_membership(B, finer, seed, samples).member):
            continue
        checked += 1
        if not kj_membership(A + B, spec, seed, samples).member:
            violations += 1
    return KSumReport(checked, violations)


@dataclass(frozen=True, eq=False)
class HausdorffWitness:
    j: int
    n_scale: int
    vector: np.ndarray
    strictness: float
    lower_bounds: Tuple[Tuple[int, float], ...]

    def to_dict(self) -> dict:
        return {
            'j': self.j,
            'N': self.n_scale,
            'strictness': self.strictness,
            'lower_bounds': [list(pair) for pair in self.lower_bounds],
        }


def _first_constrained_level(space: GradedSpace) -> int:
    for j in range(space.metric.dyadic_max + 1):
        if space.metric.outer_cylinder(2.0 ** -j):
            return j
    raise NoWitnessError(f"No dyadic ball of {space.model_id} is bounded in any seminorm")


def hausdorff_witness(A: GradedOperator, spec: Optional[KSetSpec] = None, seed: int = 0) -> HausdorffWitness:
    """(j, N) with N * A outside K_j, by scaling a vector whose image leaves C(j)."""
    if A.is_zero:
        raise NoWitnessError(f"{A.name} is zero; every multiple lies in every K_j")
    if spec is None:
        spec = KSetSpec(j=_first_constrained_level(A.target), base=2)
    j = spec.j
    src, tgt = A.source, A.target
    cylinder = tgt.metric.outer_cylinder(2.0 ** -j)

    _, _, vt = np.linalg.svd(A.matrix, full_matrices=False)
    candidates = np.vstack([np.eye(src.dim), vt[:3], -vt[:3]])
    image_gauges = cylinder_gauge(tgt.tower.profile(A.images(candidates)), cylinder)
    limits = np.array([src.metric.strictness_limit(p) for p in src.tower.profile(candidates).T])
    if np.all(np.isinf(limits[image_gauges > 0])) and np.any(image_gauges > 0):
        raise NoWitnessError(f"{src.model_id} is not strict along any useful direction")
    with np.errstate(divide='ignore', invalid='ignore'):
        merit = np.where((image_gauges > 0) & np.isfinite(limits) & (limits > 0), image_gauges / limits, 0.0)
    if not np.any(merit > 0):
        raise NoWitnessError(f"No image of {A.name} leaves C({j})")
    best = int(np.argmax(merit))
    unit, g1, s1 = candidates[best], float(image_gauges[best]), float(limits[best])

    levels = range(1, src.metric.dyadic_max + 1)
    scale = max(spec.value(i, j) * 2.0 ** i for i in levels) / g1 * (1 + 1e-6)
    v = scale * unit
    n_scale = int(math.floor(scale * s1)) + 1
    for _ in range(64):
        if all(src.metric.distance_to_zero(2.0 ** -i * v / n_scale) < 2.0 ** -i for i in levels):
            break
        n_scale += 1
    else:
        raise NoWitnessError("Could not place the scaled vectors inside the dyadic balls")

    lower_bounds = tuple((i, 2.0 ** -i * scale * g1) for i in levels)
    logger.info(f"Hausdorff witness for {A.name}: j={j}, N={n_scale}")
    return HausdorffWitness(j, n_scale, v, scale * s1, lower_bounds)


@dataclass(frozen=True)
class ModulusReport:
    delta: float
    samples: int
    violations: int
    worst_ratio: float
    directions: int


def eval_modulus(
    A: GradedOperator,
    cert: TamenessCertificate,
    n: int,
    samples: int = 10_000,
    seed: int = 0,
    pool: int = 8,
) -> ModulusReport:
    """Sample B in the trb-ball of radius delta around 0 and v in B_{2^-(n+r)}; count B v outside B_{2^-n}."""
    _require_certificate(A, cert)
    r, b = cert.r, cert.b
    src, tgt = A.source, A.target
    top = min(tgt.n_max, tgt.metric.dyadic_max, src.metric.dyadic_max - r)
    if not b <= n <= top:
        raise LevelOutOfRangeError(n, top)

    delta = 2.0 ** -n * tgt.metric.config.phi(1.0) / 2
    rng = make_rng(seed, stream=300 + n)

    # Operator directions with their trb profile
    directions = [] if A.is_zero else [A.matrix]
    while len(directions) < pool:
        directions.append(rng.standard_normal(A.matrix.shape))
    usable = []
    for k, matrix in enumerate(directions):
        Z = GradedOperator(matrix, src, tgt, f"Z{k}")
        terms = _trb_terms(Z, r, b, seed, 64, lp=False)
        if any(math.isinf(value) for _, value in terms):
            continue
        if not any(value > 0 for _, value in terms):
            continue
        lo, hi = 0.0, 1.0
        while _trb_value(tgt, terms, hi) < delta:
            hi *= 2.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if _trb_value(tgt, terms, mid) < delta:
                lo = mid
            else:
                hi = mid
        usable.append((Z.matrix, lo))

    if not usable:
        return ModulusReport(delta, 0, 0, 0.0, 0)

    pick = rng.integers(0, len(usable), size=samples)
    shrink = rng.uniform(0.0, 1.0, size=samples)
    ray = rng.standard_normal((samples, src.dim))
    s = np.atleast_1d(src.metric.ray_radius(src.tower.profile(ray), 2.0 ** -(n + r)))
    points = (np.where(np.isfinite(s), s, 1.0) * rng.uniform(0.0, 1.0, size=samples))[:, None] * ray

    images = np.empty((samples, tgt.dim))
    for k, (matrix, t_max) in enumerate(usable):
        chosen = pick == k
        images[chosen] = (shrink[chosen, None] * t_max) * (points[chosen] @ matrix.T)
    distances = np.atleast_1d(tgt.metric.distance_to_zero(images))
    radius = 2.0 ** -n
    violations = int(np.count_nonzero(distances >= radius))
    if violations:
        logger.warning(f"Evaluation modulus at n={n}: {violations} of {samples} images left the ball")
    return ModulusReport(delta, samples, violations, float(distances.max() / radius), len(usable))


@dataclass(frozen=True)
class ProbeResult:
    form: str
    constants: Tuple[float, ...]
    ladder: Tuple[Tuple[float, float], ...]
    growth: float
    bounded: bool

    def to_dict(self) -> dict:
        return {
            'form': self.form,
            'C': list(self.constants),
            'ladder': [list(pair) for pair in self.ladder],
            'growth': self.growth,
            'bounded': self.bounded,
        }


def nonlinear_tameness_probe(
    f: Callable[[np.ndarray], np.ndarray],
    u: GradedVector,
    r: int,
    form: str,
    source: GradedSpace,
    target: GradedSpace,
    radii: Optional[np.ndarray] = None,
    directions: int = 16,
    seed: int = 0,
    growth_limit: float = 10.0,
) -> ProbeResult:
    """Fit C_n in mu_n(f(a) - f(u)) <= C_n (1 + mu_{n+r}(a - u)), or the homogeneous form without the 1."""
    if form not in PROBE_FORMS:
        raise ValueError(f"Unknown probe form '{form}', expected one of {PROBE_FORMS}")
    if u.model_id != source.model_id:
        raise DimensionError(f"Base point belongs to {u.model_id}, not {source.model_id}")
    radii = np.logspace(-8, 0, 17) if radii is None else np.asarray(radii, dtype=float)
    radii = np.sort(radii)[::-1]
    top = min(target.n_max, source.n_max - r)
    if top < 0:
        raise LevelOutOfRangeError(r, source.n_max, what='order')

    def evaluate(x: np.ndarray) -> np.ndarray:
        value = f(x)
        if isinstance(value, GradedVector):
            value = value.coords
        return np.atleast_1d(np.asarray(value, dtype=float))

    rng = make_rng(seed, stream=400)
    dirs = rng.standard_normal((directions, source.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    base = evaluate(u.coords)

    ratios = np.zeros((top + 1, len(radii), directions))
    for ri, radius in enumerate(radii):
        steps = radius * dirs
        diffs = np.vstack([evaluate(u.coords + step) - base for step in steps])
        num = target.tower.profile(diffs)
        den = source.tower.profile(steps)
        for n in range(top + 1):
            denominator = den[n + r] + (1.0 if form == 'additive_one' else 0.0)
            with np.errstate(divide='ignore', invalid='ignore'):
                ratios[n, ri] = np.where(denominator > 0, num[n] / np.where(denominator > 0, denominator, 1.0),
                                         np.where(num[n] > 0, np.inf, 0.0))

    constants = tuple(float(c) for c in ratios.max(axis=(1, 2)))
    per_radius = ratios.max(axis=(0, 2))
    ladder = tuple((float(rad), float(q)) for rad, q in zip(radii, per_radius))
    first, last = per_radius[0], per_radius[-1]
    if last == 0:
        growth = 0.0
    elif first == 0 or math.isinf(last):
        growth = math.inf
    else:
        growth = float(last / first)
    return ProbeResult(form, constants, ladder, growth, bool(math.isfinite(max(constants)) and growth <= growth_limit))
