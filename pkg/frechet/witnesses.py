import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import Polynomial
from scipy.optimize import linprog

from frechet.errors import (
    InfeasibleExtensionError,
    SupportOverlapError,
    TruncationError,
)
from frechet.graded_space import (
    FrechetMetric,
    GradedSpace,
    GradedVector,
    GradingConfig,
    SeminormBlock,
    SeminormFamily,
    make_rng,
)
from frechet.operators import GradedOperator, op_norm

logger = logging.getLogger(__name__)

MODEL_KINDS = ('trig', 'sequence', 'scalar', 'normed')
NORMED_DYADIC_MAX = 16


@dataclass(frozen=True, eq=False)
class ModelSpace(GradedSpace):
    """A built model: its kind, build parameters and model-specific matrices."""
    kind: str = 'sequence'
    params: Tuple[Tuple[str, Any], ...] = ()
    diff_matrix: Optional[np.ndarray] = None
    grid: Optional[np.ndarray] = None

    def param(self, name: str, default: Any = None) -> Any:
        return dict(self.params).get(name, default)

    def to_spec(self) -> dict:
        spec = {'kind': self.kind, 'id': self.model_id}
        spec.update(dict(self.params))
        return spec

    def checksums(self) -> Dict[str, str]:
        """SHA-256 of the grid and of every matrix that defines the model."""
        matrices = hashlib.sha256()
        for block in self.tower.blocks:
            matrices.update(np.ascontiguousarray(block.matrix).tobytes())
        if self.diff_matrix is not None:
            matrices.update(np.ascontiguousarray(self.diff_matrix).tobytes())
        grid = hashlib.sha256()
        if self.grid is not None:
            grid.update(np.ascontiguousarray(self.grid).tobytes())
        return {'grid': grid.hexdigest(), 'matrices': matrices.hexdigest()}

    def mode_index(self, frequency: int, kind: str = 'sin') -> int:
        """Coordinate of cos(k t) or sin(k t) in the trigonometric basis."""
        if self.kind != 'trig':
            raise TruncationError(f"{self.model_id} has no trigonometric modes")
        modes = self.param('M')
        if not 0 <= frequency <= modes:
            raise TruncationError(f"Frequency {frequency} exceeds the {modes} modes of {self.model_id}")
        if frequency == 0:
            if kind == 'sin':
                raise ValueError("sin(0 t) is the zero function")
            return 0
        return 2 * frequency - 1 if kind == 'cos' else 2 * frequency

    def point_evaluation(self, t: float, order: int = 0) -> np.ndarray:
        """Row functional v -> v^(order)(t) on the trigonometric model."""
        if self.kind != 'trig':
            raise TruncationError(f"{self.model_id} has no point evaluations")
        return _trig_rows(np.array([float(t)]), self.param('M'), order)[0]

    def coordinate_functional(self, n: int) -> np.ndarray:
        """The functional d_n(v) = v_n."""
        row = np.zeros(self.dim)
        row[n] = 1.0
        return row


def _trig_rows(t: np.ndarray, modes: int, order: int = 0) -> np.ndarray:
    """Rows of the order-th derivatives of [1, cos t, sin t, ..., cos M t, sin M t] at t."""
    rows = np.zeros((len(t), 2 * modes + 1))
    rows[:, 0] = 1.0 if order == 0 else 0.0
    shift = order * math.pi / 2
    for k in range(1, modes + 1):
        rows[:, 2 * k - 1] = k ** order * np.cos(k * t + shift)
        rows[:, 2 * k] = k ** order * np.sin(k * t + shift)
    return rows


def _grading(n_max: int, phi_kind: str, weights: Optional[Sequence[float]], dyadic_max: Optional[int] = None) -> GradingConfig:
    return GradingConfig(
        n_max=n_max,
        weights=tuple(weights) if weights is not None else None,
        phi_kind=phi_kind,
        dyadic_max=dyadic_max,
    )


def build_trig_model(
    M: int,
    K: int,
    G: Optional[int] = None,
    model_id: Optional[str] = None,
    phi_kind: str = 'rational',
    weights: Optional[Sequence[float]] = None,
) -> ModelSpace:
    """Trigonometric polynomials of degree M on [0, 1], graded by ||f||_k = max_{j<=k} sup_grid |f^(j)|."""
    if M < 1 or K < 0:
        raise ValueError(f"Need M >= 1 and K >= 0, got M={M}, K={K}")
    G = 4 * M if G is None else int(G)
    if G < 4 * M:
        raise ValueError(f"Grid of {G} points is too small for {M} modes (need at least {4 * M})")
    model_id = model_id or f"trig_M{M}_K{K}_G{G}"

    grid = np.linspace(0.0, 1.0, G)
    dim = 2 * M + 1
    diff = np.zeros((dim, dim))
    for k in range(1, M + 1):
        diff[2 * k - 1, 2 * k] = k
        diff[2 * k, 2 * k - 1] = -k

    evaluations = [_trig_rows(grid, M)]
    for _ in range(K):
        evaluations.append(evaluations[-1] @ diff)
    blocks = [SeminormBlock(E, 'max') for E in evaluations]

    tower = SeminormFamily(blocks, monotonized=True, model_id=model_id)
    metric = FrechetMetric(tower, _grading(K, phi_kind, weights))
    grid.setflags(write=False)
    diff.setflags(write=False)
    logger.debug(f"Built trigonometric model {model_id} (dimension {dim})")
    return ModelSpace(
        model_id=model_id,
        metric=metric,
        kind='trig',
        params=(('M', M), ('K', K), ('G', G), ('phi', phi_kind)),
        diff_matrix=diff,
        grid=grid,
    )


def build_sequence_model(
    D: int,
    level_weights: Optional[np.ndarray] = None,
    levels: int = 4,
    norm_kind: str = 'max',
    model_id: Optional[str] = None,
    phi_kind: str = 'rational',
    weights: Optional[Sequence[float]] = None,
) -> ModelSpace:
    """Truncated sequence space graded by ||v||_n = max_k w_{n,k} |v_k| (or the weighted Euclidean norm)."""
    if level_weights is None:
        k = np.arange(D, dtype=float)
        level_weights = np.array([(k + 1.0) ** n for n in range(levels + 1)])
    level_weights = np.atleast_2d(np.asarray(level_weights, dtype=float))
    if level_weights.shape[1] != D:
        raise ValueError(f"Level weights have {level_weights.shape[1]} columns for dimension {D}")
    if np.any(level_weights <= 0):
        raise ValueError("Level weights must be positive")
    n_max = level_weights.shape[0] - 1
    model_id = model_id or f"seq_D{D}_N{n_max}_{norm_kind}"

    blocks = [SeminormBlock(np.diag(row), norm_kind) for row in level_weights]
    tower = SeminormFamily(blocks, monotonized=True, model_id=model_id)
    metric = FrechetMetric(tower, _grading(n_max, phi_kind, weights))
    return ModelSpace(
        model_id=model_id,
        metric=metric,
        kind='sequence',
        params=(('D', D), ('N', n_max), ('norm', norm_kind), ('phi', phi_kind)),
    )


def build_scalar_model(mode: str = 'sum_form', model_id: Optional[str] = None, phi_kind: str = 'rational') -> ModelSpace:
    """The real line with |x|, metrized by phi(|x - y|) or by sqrt(|x - y|)."""
    model_id = model_id or f"scalar_{mode}"
    tower = SeminormFamily([SeminormBlock(np.ones((1, 1)), 'max')], model_id=model_id)
    metric = FrechetMetric(tower, _grading(0, phi_kind, (1.0,), NORMED_DYADIC_MAX), mode=mode)
    return ModelSpace(model_id=model_id, metric=metric, kind='scalar', params=(('mode', mode), ('phi', phi_kind)))


def build_normed_model(
    D: int,
    kind: str = 'euclidean',
    form: Optional[np.ndarray] = None,
    model_id: Optional[str] = None,
    phi_kind: str = 'rational',
) -> ModelSpace:
    """Single-level normed space v -> ||L v||."""
    form = np.eye(D) if form is None else np.asarray(form, dtype=float)
    model_id = model_id or f"normed_D{D}_{kind}"
    tower = SeminormFamily([SeminormBlock(form, kind)], model_id=model_id)
    metric = FrechetMetric(tower, _grading(0, phi_kind, (1.0,), NORMED_DYADIC_MAX))
    return ModelSpace(model_id=model_id, metric=metric, kind='normed', params=(('D', D), ('norm', kind), ('phi', phi_kind)))


def derivative_operator(model: ModelSpace) -> GradedOperator:
    if model.kind != 'trig':
        raise TruncationError(f"{model.model_id} has no differentiation matrix")
    return GradedOperator(model.diff_matrix, model, model, 'd/dt')


def multiplication_operator(model: ModelSpace, coefficients: Sequence[float], name: str = 'mult') -> GradedOperator:
    """Multiplication by a fixed trigonometric polynomial, collocated on the grid and projected back."""
    if model.kind != 'trig':
        raise TruncationError(f"{model.model_id} is not a function model")
    g = np.zeros(model.dim)
    coefficients = np.asarray(coefficients, dtype=float)
    if len(coefficients) > model.dim:
        raise TruncationError(f"Multiplier has {len(coefficients)} coefficients, model has {model.dim}")
    g[:len(coefficients)] = coefficients
    evaluation = model.tower.blocks[0].matrix
    values = evaluation @ g
    matrix = np.linalg.pinv(evaluation) @ (values[:, None] * evaluation)
    return GradedOperator(matrix, model, model, name)


@dataclass(frozen=True, eq=False)
class StepFullReport:
    vector: GradedVector
    s: float
    multiplier: float
    norms: Tuple[float, ...]
    bracket: Tuple[Tuple[int, float, float, float, bool], ...]
    sanity: bool

    @property
    def holds(self) -> bool:
        return self.sanity and all(row[-1] for row in self.bracket)

    def to_dict(self) -> dict:
        return {
            's': self.s,
            'M': self.multiplier,
            'norms': list(self.norms),
            'bracket': [list(row) for row in self.bracket],
            'sanity': self.sanity,
            'holds': self.holds,
        }


def _frequency(model: ModelSpace, value: float, what: str) -> int:
    frequency = int(round(value))
    if abs(value - frequency) > 1e-12 or frequency < 1:
        raise TruncationError(f"{what} = {value} is not a positive integer frequency")
    if frequency > model.param('M') / 2:
        raise TruncationError(f"{what} = {frequency} exceeds half of the {model.param('M')} modes")
    return frequency


def step_full_witness(model: ModelSpace, s: float) -> StepFullReport:
    """v = sin(2 s t) with the bracket s^i < ||v||_i < M (4 s)^i for i >= 1."""
    if model.kind != 'trig':
        raise TruncationError("Step-full witnesses live on the trigonometric model")
    frequency = _frequency(model, 2 * s, '2s')
    coords = np.zeros(model.dim)
    coords[model.mode_index(frequency, 'sin')] = 1.0
    vector = model.vector(coords)
    norms = model.tower.profile(coords)

    levels = range(1, model.n_max + 1)
    ratio = max((norms[i] / (4 * s) ** i for i in levels), default=0.0)
    multiplier = 1.0 if ratio < 1 else float(math.ceil(ratio) + 1)
    bracket = tuple(
        (i, s ** i, float(norms[i]), multiplier * (4 * s) ** i, bool(s ** i < norms[i] < multiplier * (4 * s) ** i))
        for i in levels
    )
    return StepFullReport(vector, s, multiplier, tuple(float(x) for x in norms), bracket, bool(norms[0] <= 1.0))


def sinN_ratio(model: ModelSpace, N: int) -> float:
    """||d/dt sin(N t)||_0 / ||sin(N t)||_0 on the grid."""
    if model.kind != 'trig':
        raise TruncationError("sin(N t) lives on the trigonometric model")
    frequency = _frequency(model, N, 'N')
    coords = np.zeros(model.dim)
    coords[model.mode_index(frequency, 'sin')] = 1.0
    evaluation = model.tower.blocks[0].matrix
    return float(np.max(np.abs(evaluation @ (model.diff_matrix @ coords))) / np.max(np.abs(evaluation @ coords)))


def smoothstep(q: int) -> Polynomial:
    """S with S(0)=0, S(1)=1 and derivatives of orders 1..q vanishing at both ends."""
    y = Polynomial([0.0, 1.0])
    total = Polynomial([0.0])
    for k in range(q + 1):
        total = total + math.comb(q + k, k) * math.comb(2 * q + 1, q - k) * (-y) ** k
    return y ** (q + 1) * total


@dataclass(frozen=True, eq=False)
class JetBump:
    """a (t - p)^n / n! times a plateau of half-width h, in the local variable x = (t - p) / h."""
    center: float
    half_width: float
    order: int
    amplitude: float
    smoothness: int
    pieces: Tuple[Polynomial, Polynomial, Polynomial] = field(init=False)

    def __post_init__(self):
        h = self.half_width
        if not h > 0:
            raise ValueError(f"Bump half-width must be positive, got {h}")
        mono = Polynomial.basis(self.order) * (self.amplitude * h ** self.order / math.factorial(self.order))
        step = smoothstep(self.smoothness)
        left = mono * (1 - step(Polynomial([-1.0, -2.0])))
        right = mono * (1 - step(Polynomial([-1.0, 2.0])))
        object.__setattr__(self, 'pieces', (left, mono, right))

    @property
    def support(self) -> Tuple[float, float]:
        return self.center - self.half_width, self.center + self.half_width

    def derivative(self, t, k: int = 0) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = (t - self.center) / self.half_width
        out = np.zeros_like(x)
        scale = self.half_width ** -k
        for piece, mask in zip(
            self.pieces,
            ((x >= -1) & (x < -0.5), (x >= -0.5) & (x <= 0.5), (x > 0.5) & (x <= 1)),
        ):
            if mask.any():
                out[mask] = piece.deriv(k)(x[mask]) * scale if k else piece(x[mask])
        return out

    def c_norm(self, k: int, samples: int = 2049) -> float:
        """max_{j<=k} sup |g^(j)| over the support."""
        t = np.linspace(*self.support, samples)
        return max(float(np.max(np.abs(self.derivative(t, j)))) for j in range(k + 1))


@dataclass(frozen=True, eq=False)
class JetFunction:
    bumps: Tuple[JetBump, ...]

    def derivative(self, t, k: int = 0) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return sum((bump.derivative(t, k) for bump in self.bumps), np.zeros_like(t))

    def __call__(self, t) -> np.ndarray:
        return self.derivative(t, 0)

    def conditions(self) -> List[Tuple[int, float, float, float]]:
        """(order, point, prescribed value, achieved value) per condition."""
        return [
            (bump.order, bump.center, bump.amplitude, float(self.derivative(bump.center, bump.order)[0]))
            for bump in self.bumps
        ]

    def supports_disjoint(self) -> bool:
        spans = sorted(bump.support for bump in self.bumps)
        return all(a[1] < b[0] for a, b in zip(spans, spans[1:]))


def prescribed_jet(
    points: Sequence[float],
    values: Sequence[float],
    orders: Optional[Sequence[int]] = None,
    half_widths: Optional[Sequence[float]] = None,
    smoothness: Optional[int] = None,
    small: bool = False,
) -> JetFunction:
    """Smooth f with f^(n)(p_n) = a_n, as a sum of disjoint localized bumps.

    Condition n uses derivative order n unless ``orders`` says otherwise. With
    ``small`` each bump of order n >= 1 is narrowed until its C^{n-1} norm is
    below 2^-n.
    """
    points = [float(p) for p in points]
    values = [float(a) for a in values]
    if len(points) != len(values) or not points:
        raise ValueError("Need matching, nonempty lists of points and values")
    if len(set(points)) != len(points):
        raise ValueError("Points must be distinct")
    orders = list(range(len(points))) if orders is None else [int(n) for n in orders]
    q = max(orders) + 2 if smoothness is None else int(smoothness)

    if half_widths is None:
        half_widths = []
        for i, p in enumerate(points):
            gaps = [abs(p - other) for j, other in enumerate(points) if j != i]
            half_widths.append(0.45 * min(gaps) if gaps else 0.25)
    half_widths = [float(h) for h in half_widths]

    order = sorted(range(len(points)), key=lambda i: points[i])
    for i, j in zip(order, order[1:]):
        if points[i] + half_widths[i] >= points[j] - half_widths[j]:
            raise SupportOverlapError((i, j))

    bumps = []
    for p, a, n, h in zip(points, values, orders, half_widths):
        bump = JetBump(p, h, n, a, q)
        if small and n >= 1:
            for _ in range(200):
                if bump.c_norm(n - 1) < 2.0 ** -n:
                    break
                bump = JetBump(p, bump.half_width / 2, n, a, q)
            else:
                raise TruncationError(f"Could not make the order-{n} bump smaller than 2^-{n}")
        bumps.append(bump)
    return JetFunction(tuple(bumps))


@dataclass(frozen=True)
class SublinearSpec:
    """p(v) = sum of c_l ||v||_l over (level, coefficient) terms."""
    terms: Tuple[Tuple[int, float], ...]

    @classmethod
    def level(cls, n: int, scale: float = 1.0) -> 'SublinearSpec':
        return cls(((n, float(scale)),))

    def evaluate(self, space: GradedSpace, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=float)
        return sum(c * np.asarray(space.tower.evaluate(coords, n)) for n, c in self.terms)


@dataclass(frozen=True, eq=False)
class DominatedFunctional:
    coefficients: np.ndarray
    p: SublinearSpec
    constant: float
    checked: int
    violations: int

    def __call__(self, coords: np.ndarray) -> np.ndarray:
        return np.asarray(coords, dtype=float) @ self.coefficients


def _dual_representation(space: GradedSpace, p: SublinearSpec, W: np.ndarray, targets: np.ndarray) -> Tuple[np.ndarray, float]:
    """Functional y with W y = targets minimizing the dual norm of p; returns (y, dual norm)."""
    kinds = [space.tower.level_kind(n) for n, _ in p.terms]
    matrices = []
    for (n, c), kind in zip(p.terms, kinds):
        if kind == 'mixed':
            blocks = space.tower.level_blocks(n)
            strongest = max(blocks, key=lambda block: float(np.max(block.evaluate(W))))
            matrices.append((c * strongest.matrix, strongest.kind))
        else:
            matrices.append((c * space.tower.stacked_matrix(n), kind))

    if len(matrices) == 1 and matrices[0][1] == 'euclidean':
        S = matrices[0][0]
        z, *_ = np.linalg.lstsq(W @ S.T, targets, rcond=None)
        if np.linalg.norm(W @ S.T @ z - targets) > 1e-9 * max(1.0, np.linalg.norm(targets)):
            raise InfeasibleExtensionError("Prescribed values are inconsistent on the given vectors")
        return S.T @ z, float(np.linalg.norm(z))
    if any(kind != 'max' for _, kind in matrices):
        raise ValueError("Sums of seminorms are supported for max-type levels only")

    # Variables: z_l^+ and z_l^- per term, then tau
    sizes = [S.shape[0] for S, _ in matrices]
    total = 2 * sum(sizes)
    eq_blocks, ub_rows = [], []
    offset = 0
    for (S, _), size in zip(matrices, sizes):
        WS = W @ S.T
        eq_blocks.append(np.hstack([WS, -WS]))
        row = np.zeros(total + 1)
        row[offset:offset + 2 * size] = 1.0
        row[-1] = -1.0
        ub_rows.append(row)
        offset += 2 * size
    A_eq = np.hstack([np.hstack(eq_blocks), np.zeros((W.shape[0], 1))])
    cost = np.zeros(total + 1)
    cost[-1] = 1.0
    result = linprog(cost, A_ub=np.vstack(ub_rows), b_ub=np.zeros(len(ub_rows)), A_eq=A_eq, b_eq=targets,
                     bounds=(0, None), method='highs')
    if result.status != 0:
        raise InfeasibleExtensionError(f"No functional takes the prescribed values ({result.message})")

    y = np.zeros(W.shape[1])
    offset = 0
    for (S, _), size in zip(matrices, sizes):
        z = result.x[offset:offset + size] - result.x[offset + size:offset + 2 * size]
        y += S.T @ z
        offset += 2 * size
    return y, float(result.x[-1])


def dominated_extension(
    w: Union[GradedVector, Sequence[GradedVector]],
    c: Union[float, Sequence[float]],
    p: SublinearSpec,
    space: GradedSpace,
    rescale: bool = False,
    seed: int = 0,
    samples: int = 10_000,
) -> DominatedFunctional:
    """Linear f with f(w) = c and f <= p, found by a feasibility LP at truncation.

    Several vectors and values may be prescribed at once. With ``rescale`` the
    smallest admissible constant tau with f <= tau p is returned instead of an
    infeasibility error.
    """
    vectors = list(w) if isinstance(w, (list, tuple)) else [w]
    targets = np.atleast_1d(np.asarray(c, dtype=float))
    if len(vectors) != len(targets):
        raise ValueError("Need one prescribed value per vector")
    W = space.coords_of(vectors)

    if len(vectors) == 1 and not rescale:
        bound = float(p.evaluate(space, W[0]))
        if abs(targets[0]) > bound * (1 + 1e-12):
            raise InfeasibleExtensionError(f"|c| = {abs(targets[0]):.6g} exceeds p(w) = {bound:.6g}")

    y, tau = _dual_representation(space, p, W, targets)
    if tau > 1 + 1e-9 and not rescale:
        raise InfeasibleExtensionError(f"Extension needs f <= {tau:.6g} p, not f <= p", slack=tau)
    constant = tau if rescale else 1.0

    rng = make_rng(seed, stream=500)
    probes = np.vstack([
        rng.standard_normal((samples, space.dim)),
        np.eye(space.dim),
        -np.eye(space.dim),
        W,
        -W,
    ])
    pv = p.evaluate(space, probes)
    violations = int(np.count_nonzero(probes @ y > constant * pv + 1e-8 * (1 + pv)))
    if violations:
        logger.warning(f"Dominated extension violates its bound on {violations} samples")
    return DominatedFunctional(y, p, constant, len(probes), violations)


@dataclass(frozen=True, eq=False)
class UnboundedFunctional:
    level: int
    vectors: Tuple[np.ndarray, ...]
    distances: Tuple[float, ...]
    partial_sums: Tuple[np.ndarray, ...]
    constants: Tuple[float, ...]
    ladder: Tuple[Tuple[int, float], ...]
    continuity: Tuple[float, ...]

    @property
    def functional(self) -> np.ndarray:
        return self.partial_sums[-1]

    def to_dict(self) -> dict:
        return {
            'level': self.level,
            'distances': list(self.distances),
            'constants': list(self.constants),
            'ladder': [list(pair) for pair in self.ladder],
            'continuity': list(self.continuity),
        }


def unbounded_functional(model: ModelSpace, eps: float, terms: int = 3, seed: int = 0, samples: int = 2000) -> UnboundedFunctional:
    """Partial sums of functionals f^(n) with f^(n)(v_n) = 2^n on vectors v_n in B_eps."""
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if model.kind not in ('trig', 'sequence'):
        raise TruncationError(f"{model.model_id} cannot host the construction")
    metric = model.metric
    config = metric.config
    tails = config.tail_weights()

    level = next((i for i in range(1, model.n_max + 1) if tails[i] <= eps / 2), None)
    if level is None:
        raise TruncationError(f"Truncation N={model.n_max} has no tail below eps/2 = {eps / 2}")
    head = float(sum(config.weights[:level]))
    bound = float(config.phi_inverse(eps / (2 * head)))

    profiles = model.tower.profile(np.eye(model.dim))
    with np.errstate(divide='ignore', invalid='ignore'):
        growth = np.where(profiles[level - 1] > 0, profiles[level] / profiles[level - 1], np.inf)
    order = [k for k in np.argsort(-growth, kind='stable') if growth[k] > 2.0 / bound and profiles[level, k] > 0]
    if len(order) < terms:
        raise TruncationError(f"{model.model_id} hosts only {len(order)} of {terms} required directions")

    vectors, distances = [], []
    for k in order[:terms]:
        v = np.zeros(model.dim)
        v[k] = 2.0 / profiles[level, k]
        d = float(metric.distance_to_zero(v))
        if d >= eps:
            raise TruncationError(f"Direction {k} does not fit into B_eps (d = {d:.6g})")
        vectors.append(v)
        distances.append(d)

    p = SublinearSpec.level(level)
    partial = np.zeros(model.dim)
    partial_sums, constants = [partial.copy()], []
    for n in range(1, terms + 1):
        targets = np.zeros(terms)
        targets[n - 1] = 2.0 ** n
        piece = dominated_extension([model.vector(v) for v in vectors], targets, p, model, rescale=True, seed=seed, samples=256)
        constants.append(piece.constant)
        partial = partial + piece.coefficients
        partial_sums.append(partial.copy())

    # Sup of |F_k| over B_eps samples and the vectors themselves
    rng = make_rng(seed, stream=600)
    rays = rng.standard_normal((samples, model.dim))
    s = np.atleast_1d(metric.ray_radius(model.tower.profile(rays), eps))
    ball = np.vstack([np.where(np.isfinite(s), s, 1.0)[:, None] * rays, np.array(vectors)])
    ladder = tuple((k, float(np.max(np.abs(ball @ F)))) for k, F in enumerate(partial_sums))

    scalar = build_scalar_model()
    continuity = tuple(
        op_norm(GradedOperator(F[None, :], model, scalar, f"F{k}"), level, 0, seed=seed, samples=64).upper
        for k, F in enumerate(partial_sums)
    )
    logger.info(f"Unbounded functional on {model.model_id}: level {level}, sup ladder {[round(x, 3) for _, x in ladder]}")
    return UnboundedFunctional(level, tuple(vectors), tuple(distances), tuple(partial_sums), tuple(constants), ladder, continuity)


def bump_profile(x):
    """C^1 profile 1 - 3x^2 + 2x^3 on [0, 1], zero beyond 1."""
    x = np.asarray(x, dtype=float)
    inside = 1.0 - 3.0 * x ** 2 + 2.0 * x ** 3
    out = np.where(x < 1.0, inside, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class MetricBump:
    """psi(v) = beta(d(v, center) / radius), supported in the closed ball around center."""
    space: GradedSpace
    center: np.ndarray
    radius: float

    def __call__(self, coords: np.ndarray):
        distance = self.space.metric.distance(np.asarray(coords, dtype=float), self.center)
        return bump_profile(np.asarray(distance) / self.radius)


def metric_bump(space: GradedSpace, center: GradedVector, radius: float) -> MetricBump:
    if not radius > 0:
        raise ValueError(f"Bump radius must be positive, got {radius}")
    return MetricBump(space, space.coords_of(center)[0], float(radius))


@dataclass(frozen=True, eq=False)
class GadgetReport:
    indices: Tuple[int, ...]
    points: Tuple[np.ndarray, ...]
    distances: Tuple[float, ...]
    radii: Tuple[float, ...]
    bumps: Tuple[MetricBump, ...]
    functionals: Tuple[np.ndarray, ...]
    constants: Tuple[float, ...]
    values: Tuple[float, ...]
    bump_values: Tuple[float, ...]
    pairs_checked: int

    def evaluate(self, coords: np.ndarray) -> float:
        """E(v) = sum of psi_n(v) A_n(v)."""
        coords = np.asarray(coords, dtype=float)
        return float(sum(bump(coords) * float(coords @ A) for bump, A in zip(self.bumps, self.functionals)))

    def to_dict(self) -> dict:
        return {
            'indices': list(self.indices),
            'distances': list(self.distances),
            'radii': list(self.radii),
            'values': list(self.values),
            'bump_values': list(self.bump_values),
            'constants': list(self.constants),
            'pairs_checked': self.pairs_checked,
        }


def eval_discontinuity_gadget(
    model: ModelSpace,
    length: int = 5,
    spacing: int = 4,
    start: int = 1,
    direction: int = 0,
    seed: int = 0,
) -> GadgetReport:
    """Points w_n -> 0 with disjoint metric bumps and functionals A_n(w_n) = n + 1.

    E(v) = sum psi_n(v) A_n(v) then satisfies E(w_n) > n while d(w_n, 0) <= 2^-n.
    """
    if length < 1 or spacing < 1:
        raise ValueError("Ladder length and spacing must be positive")
    metric = model.metric
    unit = np.zeros(model.dim)
    unit[direction] = 1.0
    profile = model.tower.profile(unit)
    indices = tuple(start + spacing * k for k in range(length))

    points, distances, radii = [], [], []
    for n in indices:
        s = metric.ray_radius(profile, 0.75 * 2.0 ** -n)
        if math.isinf(s):
            raise TruncationError(f"Direction {direction} never leaves B_(0.75*2^-{n})")
        w = s * unit
        points.append(w)
        distances.append(float(metric.distance_to_zero(w)))
        radii.append(2.0 ** -(n + 2))

    pairs = 0
    for a in range(length):
        for b in range(a + 1, length):
            pairs += 1
            if metric.distance(points[a], points[b]) <= radii[a] + radii[b]:
                raise SupportOverlapError((indices[a], indices[b]))

    p = SublinearSpec.level(0)
    bumps, functionals, constants = [], [], []
    for n, w, radius in zip(indices, points, radii):
        extension = dominated_extension(model.vector(w), n + 1.0, p, model, rescale=True, seed=seed, samples=256)
        bumps.append(MetricBump(model, w, radius))
        functionals.append(extension.coefficients)
        constants.append(extension.constant)

    report = GadgetReport(
        indices=indices,
        points=tuple(points),
        distances=tuple(distances),
        radii=tuple(radii),
        bumps=tuple(bumps),
        functionals=tuple(functionals),
        constants=tuple(constants),
        values=(),
        bump_values=tuple(float(bump(w)) for bump, w in zip(bumps, points)),
        pairs_checked=pairs,
    )
    values = tuple(report.evaluate(w) for w in points)
    logger.info(f"Evaluation gadget on {model.model_id}: E(w_n) = {[round(v, 3) for v in values]}")
    return GadgetReport(**{**report.__dict__, 'values': values})
