import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from typing import FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog

from frechet.errors import (
    ChainOrderError,
    DimensionError,
    UnknownPaletteError,
    UnsupportedBodyError,
)
from frechet.graded_space import (
    DEFAULT_TOLERANCE,
    GradedSpace,
    GradedVector,
    gauge_bounds,
    make_rng,
    star_gauge,
)
from frechet.operators import GradedOperator, op_norm, same_space

logger = logging.getLogger(__name__)

BODY_KINDS = ('v_polytope', 'metric_ball', 'gauge_sublevel')
MEASURES = ('gauge', 'seminorm')
CLOSURE_FLAGS = frozenset({'union', 'scaling', 'hull'})
BUILTIN_PALETTES = ('FC', 'F', 'CC', 'C', 'PC', 'S', 'B_s', 'B', 'T')

ABSORPTION_CAP = 2.0 ** 40
SCALE_PROBES = (0.25, 0.5, 2.0, 4.0)
EXTENT_SAMPLES = 24
SUBSPACE_TOLERANCE = 1e-9
LP_TOLERANCE = 1e-7


@dataclass(frozen=True, eq=False)
class Extent:
    """Points of a body (vertices or boundary samples) plus recession directions as rows.

    ``exact`` means the convex hull of the points and directions is the hull of the body.
    """
    points: np.ndarray
    directions: np.ndarray
    exact: bool = True

    def scaled(self, factor: float) -> 'Extent':
        return Extent(float(factor) * self.points, self.directions, self.exact)

    def union(self, other: 'Extent') -> 'Extent':
        return Extent(
            np.vstack([self.points, other.points]),
            np.vstack([self.directions, other.directions]),
            self.exact and other.exact,
        )

    def with_point(self, v: np.ndarray, steps: Sequence[float] = ()) -> 'Extent':
        """Extent of conv(body, v); ``steps`` adds samples on the segments towards v."""
        v = np.asarray(v, dtype=float)
        extra = [v[None, :]]
        for t in steps:
            extra.append((1.0 - t) * self.points + t * v)
        return Extent(np.vstack([self.points] + extra), self.directions, self.exact and not steps)


def _doubling_scale(required: float, cap: float, tolerance: float = DEFAULT_TOLERANCE) -> float:
    """Smallest power of two >= required (at least 1); +inf beyond the cap."""
    if math.isnan(required) or math.isinf(required):
        return math.inf
    if required <= 1.0 + tolerance:
        return 1.0
    scale = 2.0 ** math.ceil(math.log2(required * (1.0 - tolerance)))
    return scale if scale <= cap else math.inf


def _in_subspace(directions: np.ndarray, basis: np.ndarray) -> bool:
    """Every row of ``directions`` lies in the span of the orthonormal columns of ``basis``."""
    if directions.size == 0:
        return True
    norms = np.linalg.norm(directions, axis=1)
    if basis.shape[1] == 0:
        return bool(np.all(norms <= SUBSPACE_TOLERANCE))
    residual = directions - (directions @ basis) @ basis.T
    return bool(np.all(np.linalg.norm(residual, axis=1) <= SUBSPACE_TOLERANCE * np.maximum(1.0, norms)))


def _intersect(subspaces: Iterable[np.ndarray], dim: int) -> np.ndarray:
    complements = [null_space(basis.T) if basis.shape[1] else np.eye(dim) for basis in subspaces]
    if not complements:
        return np.eye(dim)
    stacked = np.hstack(complements)
    if stacked.shape[1] == 0:
        return np.eye(dim)
    return null_space(stacked.T)


class ConvexBody(ABC):
    """A body in one model: membership, extent and absorption oracles."""

    kind = ''
    convex = True

    def __init__(self, space: GradedSpace):
        self.space = space

    @property
    def model_id(self) -> str:
        return self.space.model_id

    def _points(self, points) -> np.ndarray:
        return self.space.coords_of(points)

    @abstractmethod
    def contains(self, points, tolerance: float = DEFAULT_TOLERANCE) -> np.ndarray:
        pass

    @abstractmethod
    def recession(self) -> np.ndarray:
        """Orthonormal columns spanning the directions of lines inside the body."""

    @abstractmethod
    def radial_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Center c and upper bounds of sup ||v - c||_k per level (+inf when unknown)."""

    @abstractmethod
    def _compute_extent(self) -> Extent:
        pass

    @cached_property
    def extent(self) -> Extent:
        return self._compute_extent()

    def contains_origin(self) -> bool:
        return bool(self.contains(np.zeros((1, self.space.dim)))[0])

    def scaled(self, factor: float) -> 'ConvexBody':
        raise UnsupportedBodyError(f"{self.kind} bodies are not closed under scaling")

    def required_scale(self, extent: Extent, cap: float = ABSORPTION_CAP, tolerance: float = DEFAULT_TOLERANCE) -> float:
        """Doubling scale lam <= cap with the extent inside lam * body, +inf if none."""
        if not _in_subspace(extent.directions, self.recession()):
            return math.inf
        if len(extent.points) == 0:
            return 1.0
        scale = 1.0
        while scale <= cap:
            if np.all(self.contains(extent.points / scale, tolerance)):
                return scale
            scale *= 2.0
        return math.inf

    def absorbs(self, other: 'ConvexBody', cap: float = ABSORPTION_CAP) -> bool:
        return math.isfinite(self.required_scale(other.extent, cap))

    @abstractmethod
    def to_dict(self) -> dict:
        pass


class VPolytope(ConvexBody):
    """Convex hull of finitely many vertices."""

    kind = 'v_polytope'

    def __init__(self, vertices, space: GradedSpace):
        super().__init__(space)
        vertices = np.array(vertices, dtype=float, ndmin=2)
        if vertices.size == 0:
            raise ValueError("A polytope needs at least one vertex")
        if not np.all(np.isfinite(vertices)):
            raise ValueError("Polytope vertices must be finite")
        if vertices.shape[1] != space.dim:
            raise DimensionError(f"Vertices of dimension {vertices.shape[1]} on {space.model_id} (dimension {space.dim})")
        vertices.setflags(write=False)
        self.vertices = vertices

    def contains(self, points, tolerance: float = DEFAULT_TOLERANCE) -> np.ndarray:
        points = self._points(points)
        count = len(self.vertices)
        a_eq = np.vstack([self.vertices.T, np.ones((1, count))])
        inside = np.zeros(len(points), dtype=bool)
        for i, p in enumerate(points):
            lp = linprog(np.zeros(count), A_eq=a_eq, b_eq=np.append(p, 1.0), bounds=(0, None), method='highs')
            inside[i] = lp.status == 0
        return inside

    def gauge(self, points) -> np.ndarray:
        """Minkowski gauge of the hull: min sum kappa with V^T kappa = p, kappa >= 0."""
        points = self._points(points)
        count = len(self.vertices)
        values = np.full(len(points), math.inf)
        for i, p in enumerate(points):
            if not np.any(p):
                values[i] = 0.0
                continue
            lp = linprog(np.ones(count), A_eq=self.vertices.T, b_eq=p, bounds=(0, None), method='highs')
            if lp.status == 0:
                values[i] = max(float(lp.fun), 0.0)
        return values

    @cached_property
    def _origin_inside(self) -> bool:
        return self.contains_origin()

    def recession(self) -> np.ndarray:
        return np.zeros((self.space.dim, 0))

    def radial_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        profile = self.space.tower.profile(self.vertices)
        return np.zeros(self.space.dim), np.max(profile, axis=1)

    def _compute_extent(self) -> Extent:
        return Extent(self.vertices, np.zeros((0, self.space.dim)), exact=True)

    def required_scale(self, extent: Extent, cap: float = ABSORPTION_CAP, tolerance: float = DEFAULT_TOLERANCE) -> float:
        if not self._origin_inside:
            return super().required_scale(extent, cap, tolerance)
        if not _in_subspace(extent.directions, self.recession()):
            return math.inf
        if len(extent.points) == 0:
            return 1.0
        return _doubling_scale(float(np.max(self.gauge(extent.points))), cap, max(tolerance, LP_TOLERANCE))

    def scaled(self, factor: float) -> 'VPolytope':
        return VPolytope(float(factor) * self.vertices, self.space)

    def translated(self, shift) -> 'VPolytope':
        return VPolytope(self.vertices + self._points(shift)[0], self.space)

    def to_dict(self) -> dict:
        return {'kind': self.kind, 'vertices': self.vertices.tolist()}


class MetricBall(ConvexBody):
    """Open metric ball B(center, radius); star-shaped around its center."""

    kind = 'metric_ball'
    convex = False

    def __init__(self, center, radius: float, space: GradedSpace, seed: int = 0):
        super().__init__(space)
        if not radius > 0:
            raise ValueError(f"Ball radius must be positive, got {radius}")
        self.center = self._points(center)[0].copy()
        self.center.setflags(write=False)
        self.radius = float(radius)
        self.seed = seed

    @property
    def at_origin(self) -> bool:
        return not np.any(self.center)

    def contains(self, points, tolerance: float = DEFAULT_TOLERANCE) -> np.ndarray:
        points = self._points(points)
        if len(points) == 0:
            return np.zeros(0, dtype=bool)
        distances = np.atleast_1d(self.space.metric.distance(points, self.center))
        return distances < self.radius

    def gauge(self, points) -> np.ndarray:
        if not self.at_origin:
            raise UnsupportedBodyError("The star gauge needs a ball centered at the origin")
        points = self._points(points)
        return star_gauge(self.space.tower.profile(points), self.radius, self.space.metric)

    def recession(self) -> np.ndarray:
        return self.space.metric.recession_subspace(self.radius)

    def radial_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        bounds = np.full(self.space.n_max + 1, math.inf)
        for k, rho in self.space.metric.outer_cylinder(self.radius):
            bounds[k] = rho
        return self.center.copy(), bounds

    def _compute_extent(self) -> Extent:
        dim = self.space.dim
        rng = make_rng(self.seed, stream=700)
        directions = np.vstack([np.eye(dim), -np.eye(dim), rng.standard_normal((EXTENT_SAMPLES, dim))])
        s = np.atleast_1d(self.space.metric.ray_radius(self.space.tower.profile(directions), self.radius))
        finite = np.isfinite(s)
        points = self.center + s[finite, None] * directions[finite]
        return Extent(points, self.recession().T, exact=False)

    def required_scale(self, extent: Extent, cap: float = ABSORPTION_CAP, tolerance: float = DEFAULT_TOLERANCE) -> float:
        if not self.at_origin:
            return super().required_scale(extent, cap, tolerance)
        if not _in_subspace(extent.directions, self.recession()):
            return math.inf
        if len(extent.points) == 0:
            return 1.0
        return _doubling_scale(float(np.max(self.gauge(extent.points))), cap, tolerance)

    def reach_bound(self) -> float:
        """sup of d(v, 0) over the ball, by the triangle inequality."""
        return float(self.space.metric.distance_to_zero(self.center)) + self.radius

    def to_dict(self) -> dict:
        return {'kind': self.kind, 'center': self.center.tolist(), 'radius': self.radius}


class GaugeSublevel(ConvexBody):
    """Intersection of sublevels {mu_n(v) <= b_n} (or of seminorm sublevels ||v||_n <= b_n).

    With ``strict`` the inequalities are strict and the body is open.
    """

    kind = 'gauge_sublevel'

    def __init__(
        self,
        bounds: Sequence[Tuple[int, float]],
        space: GradedSpace,
        measure: str = 'gauge',
        strict: bool = False,
        seed: int = 0,
    ):
        super().__init__(space)
        if measure not in MEASURES:
            raise ValueError(f"Unknown measure '{measure}', expected one of {MEASURES}")
        bounds = tuple(sorted((int(n), float(b)) for n, b in bounds))
        if not bounds:
            raise ValueError("A gauge sublevel needs at least one bound")
        for n, b in bounds:
            if not (b > 0 and math.isfinite(b)):
                raise ValueError(f"Bound at level {n} must be positive and finite, got {b}")
            if measure == 'gauge':
                space.metric.check_dyadic(n)
            else:
                space.tower.check_level(n)
        self.bounds = bounds
        self.measure = measure
        self.strict = strict
        self.seed = seed

    def level_values(self, points, hull: bool = True) -> Tuple[np.ndarray, np.ndarray]:
        """Lower and upper bounds of max_n g_n(p) / b_n per point."""
        points = self._points(points)
        lower = np.zeros(len(points))
        upper = np.zeros(len(points))
        if len(points) == 0:
            return lower, upper
        if self.measure == 'seminorm':
            profile = self.space.tower.profile(points)
            for n, b in self.bounds:
                lower = np.maximum(lower, profile[n] / b)
            return lower, lower.copy()
        for n, b in self.bounds:
            lo, hi = gauge_bounds(points, n, self.space.metric, self.seed, hull)
            lower = np.maximum(lower, lo / b)
            upper = np.maximum(upper, hi / b)
        return lower, upper

    def contains(self, points, tolerance: float = DEFAULT_TOLERANCE) -> np.ndarray:
        _, upper = self.level_values(points)
        if self.strict:
            return upper < 1.0
        return upper <= 1.0 + tolerance

    def recession(self) -> np.ndarray:
        dim = self.space.dim
        if self.measure == 'seminorm':
            stacked = np.vstack([self.space.tower.stacked_matrix(n) for n, _ in self.bounds])
            return null_space(stacked) if stacked.size else np.eye(dim)
        metric = self.space.metric
        return _intersect((metric.recession_subspace(2.0 ** -n) for n, _ in self.bounds), dim)

    def radial_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        levels = self.space.n_max + 1
        bounds = np.full(levels, math.inf)
        monotonized = self.space.tower.monotonized
        for n, b in self.bounds:
            if self.measure == 'seminorm':
                covered = range(n + 1) if monotonized else (n,)
                for k in covered:
                    bounds[k] = min(bounds[k], b)
            else:
                for k, rho in self.space.metric.outer_cylinder(2.0 ** -n):
                    bounds[k] = min(bounds[k], b * rho)
        return np.zeros(self.space.dim), bounds

    def _compute_extent(self) -> Extent:
        dim = self.space.dim
        rng = make_rng(self.seed, stream=710)
        directions = np.vstack([np.eye(dim), -np.eye(dim), rng.standard_normal((EXTENT_SAMPLES, dim))])
        _, upper = self.level_values(directions, hull=False)
        bounded = upper > 0
        scale = 1.0 - 1e-9 if self.strict else 1.0
        points = scale * directions[bounded] / upper[bounded, None]
        return Extent(points, self.recession().T, exact=False)

    def required_scale(self, extent: Extent, cap: float = ABSORPTION_CAP, tolerance: float = DEFAULT_TOLERANCE) -> float:
        if not _in_subspace(extent.directions, self.recession()):
            return math.inf
        if len(extent.points) == 0:
            return 1.0
        _, upper = self.level_values(extent.points)
        return _doubling_scale(float(np.max(upper)), cap, tolerance)

    def scaled(self, factor: float) -> 'GaugeSublevel':
        factor = float(factor)
        if not factor > 0:
            raise ValueError(f"Scale factor must be positive, got {factor}")
        return GaugeSublevel(
            [(n, factor * b) for n, b in self.bounds], self.space, self.measure, self.strict, self.seed
        )

    def to_dict(self) -> dict:
        return {
            'kind': self.kind,
            'bounds': [list(pair) for pair in self.bounds],
            'measure': self.measure,
            'strict': self.strict,
        }


def body_from_dict(spec: dict, space: GradedSpace) -> ConvexBody:
    """Build a body from its config form."""
    kind = spec.get('kind')
    if kind == 'v_polytope':
        return VPolytope(spec['vertices'], space)
    if kind == 'metric_ball':
        center = spec.get('center')
        return MetricBall(np.zeros(space.dim) if center is None else center, spec['radius'], space)
    if kind == 'gauge_sublevel':
        return GaugeSublevel(spec['bounds'], space, spec.get('measure', 'gauge'), bool(spec.get('strict', False)))
    raise UnsupportedBodyError(f"Unknown body kind '{kind}', expected one of {BODY_KINDS}")


def coordinate_box(space: GradedSpace, half_widths: Sequence[float]) -> VPolytope:
    """Box prod [-h_k, h_k] as a polytope; axes with h_k = 0 are flat."""
    half_widths = np.asarray(half_widths, dtype=float)
    if half_widths.shape != (space.dim,) or np.any(half_widths < 0):
        raise ValueError(f"Need {space.dim} nonnegative half widths")
    axes = np.flatnonzero(half_widths)
    if len(axes) == 0:
        return VPolytope(np.zeros((1, space.dim)), space)
    signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * len(axes), indexing='ij')).reshape(len(axes), -1).T
    vertices = np.zeros((len(signs), space.dim))
    vertices[:, axes] = signs * half_widths[axes]
    return VPolytope(vertices, space)


def cross_polytope(space: GradedSpace, scale: float = 1.0, axes: Optional[Sequence[int]] = None) -> VPolytope:
    """conv{+-scale e_k} over the given axes (all axes by default)."""
    axes = range(space.dim) if axes is None else axes
    eye = np.eye(space.dim)[list(axes)]
    return VPolytope(scale * np.vstack([eye, -eye]), space)


@dataclass(frozen=True, eq=False)
class PaletteFamily:
    """Finite generating family of a palette with its claimed closure operations."""
    generators: Tuple[ConvexBody, ...]
    closure_flags: FrozenSet[str] = CLOSURE_FLAGS
    name: Optional[str] = None

    def __post_init__(self):
        generators = tuple(self.generators)
        if not generators:
            raise ValueError("A palette family needs at least one generator")
        spaces = {body.model_id for body in generators}
        if len(spaces) != 1:
            raise DimensionError(f"Palette generators live on different models: {sorted(spaces)}")
        flags = frozenset(self.closure_flags)
        unknown = flags - CLOSURE_FLAGS
        if unknown:
            raise ValueError(f"Unknown closure flags {sorted(unknown)}")
        object.__setattr__(self, 'generators', generators)
        object.__setattr__(self, 'closure_flags', flags)

    @property
    def space(self) -> GradedSpace:
        return self.generators[0].space

    @property
    def scalable(self) -> bool:
        return 'scaling' in self.closure_flags

    def admissible(self, scale: float, tolerance: float = DEFAULT_TOLERANCE) -> bool:
        """Whether scale * generator is a member (scalings are members only when claimed)."""
        limit = ABSORPTION_CAP if self.scalable else 1.0 + tolerance
        return scale <= limit

    def to_dict(self) -> dict:
        return {
            'name': self.name,
            'closure_flags': sorted(self.closure_flags),
            'generators': [body.to_dict() for body in self.generators],
        }


def palette_from_dict(spec: dict, space: GradedSpace) -> PaletteFamily:
    if 'builtin' in spec:
        return builtin_palette(spec['builtin'], space, spec.get('params'))
    return PaletteFamily(
        tuple(body_from_dict(body, space) for body in spec['generators']),
        frozenset(spec.get('closure_flags', sorted(CLOSURE_FLAGS))),
        spec.get('name'),
    )


def _parse_palette_name(name: str, params: dict) -> Tuple[str, dict]:
    params = dict(params or {})
    if name in BUILTIN_PALETTES:
        return name, params
    base, _, suffix = name.partition('_')
    try:
        value = float(suffix)
    except ValueError:
        raise UnknownPaletteError(f"Unknown palette '{name}', expected one of {BUILTIN_PALETTES}")
    if base == 'T':
        params.setdefault('alpha', value)
        return 'T', params
    if base == 'B':
        params.setdefault('s', value)
        return 'B_s', params
    raise UnknownPaletteError(f"Unknown palette '{name}', expected one of {BUILTIN_PALETTES}")


def _simplices(space: GradedSpace) -> List[ConvexBody]:
    dim = space.dim
    sizes = sorted({min(2 ** j, dim) for j in range(dim.bit_length() + 1)})
    eye = np.eye(dim)
    bodies: List[ConvexBody] = [VPolytope(np.vstack([np.zeros(dim), eye[:k]]), space) for k in sizes]
    bodies.append(cross_polytope(space))
    return bodies


def _bounded_ball_radius(space: GradedSpace) -> float:
    metric = space.metric
    if metric.mode == 'sqrt_scalar':
        return 1.0
    return 0.5 * float(metric.config.tail_weights()[-1])


def builtin_palette(name: str, space: GradedSpace, params: Optional[dict] = None) -> PaletteFamily:
    """Generating family of a named palette at the model's truncation.

    In finite dimension compactness, precompactness and s-boundedness of
    closed bodies collapse to boundedness; the families differ only by the
    kinds of bodies they generate from.
    """
    key, params = _parse_palette_name(name, params)
    metric = space.metric
    top = space.n_max

    if key in ('FC', 'F'):
        generators = _simplices(space)
    elif key == 'CC':
        generators = _simplices(space) + [GaugeSublevel([(top, 1.0)], space, 'seminorm')]
    elif key in ('C', 'PC'):
        generators = _simplices(space) + [
            GaugeSublevel([(top, 1.0)], space, 'seminorm'),
            MetricBall(np.zeros(space.dim), _bounded_ball_radius(space), space),
        ]
    elif key == 'S':
        bound = float(params.get('bound', 1.0))
        generators = [GaugeSublevel([(n, bound) for n in range(top + 1)], space, 'seminorm')]
    elif key == 'B_s':
        s = float(params.get('s', 1.0))
        if not s > 0:
            raise ValueError(f"Diameter bound must be positive, got {s}")
        generators = [MetricBall(np.zeros(space.dim), 0.5 * s * 2.0 ** -k, space) for k in range(metric.dyadic_max + 2)]
    elif key == 'B':
        sup = metric.sup_distance
        default = (0.5 * sup, 0.25 * sup) if math.isfinite(sup) else (1.0, 4.0)
        generators = [MetricBall(np.zeros(space.dim), float(r), space) for r in params.get('radii', default)]
    else:
        alpha = float(params.get('alpha', 2.0))
        if not alpha > 0:
            raise ValueError(f"alpha must be positive, got {alpha}")
        generators = [
            GaugeSublevel([(n, float(D) * alpha ** n) for n in range(metric.dyadic_max + 1)], space, 'gauge')
            for D in params.get('D', (1.0, 4.0))
        ]
        name = f"T_{alpha:g}"

    logger.debug(f"Built palette {name} on {space.model_id} with {len(generators)} generators")
    return PaletteFamily(tuple(generators), CLOSURE_FLAGS, name)


def image_bound(A: GradedOperator, body: ConvexBody, n: int, seed: int = 0, samples: int = 64) -> float:
    """Upper bound of sup ||A v||_n over the body; +inf when a line of the body has unbounded image."""
    target = A.target.tower
    target.check_level(n)
    if isinstance(body, VPolytope):
        return float(np.max(target.evaluate(A.images(body.vertices), n)))

    recession = body.recession()
    if recession.shape[1]:
        leak = np.atleast_1d(target.evaluate(A.images(recession.T), n))
        scale = max(1.0, float(np.linalg.norm(target.stacked_matrix(n) @ A.matrix)))
        if np.max(leak) > SUBSPACE_TOLERANCE * scale:
            return math.inf

    center, radial = body.radial_bounds()
    base = float(target.evaluate(A.images(center), n))
    best = math.inf
    for k, rho in enumerate(radial):
        if not math.isfinite(rho):
            continue
        norm = op_norm(A, k, n, seed=seed, samples=samples).upper
        if math.isfinite(norm):
            best = min(best, rho * norm)
    if math.isinf(best) and recession.shape[1] == body.space.dim:
        # The body is the whole space and A vanishes at level n
        best = 0.0
    return base + best


@dataclass(frozen=True)
class AxiomEntry:
    axiom: int
    name: str
    status: str
    detail: str = ''
    witness: Optional[Tuple] = None

    @property
    def passed(self) -> bool:
        return self.status == 'pass'

    def to_dict(self) -> dict:
        return {
            'axiom': self.axiom,
            'name': self.name,
            'status': self.status,
            'detail': self.detail,
            'witness': list(self.witness) if self.witness is not None else None,
        }


@dataclass(frozen=True)
class AxiomReport:
    palette: Optional[str]
    entries: Tuple[AxiomEntry, ...]

    @property
    def passed(self) -> bool:
        return all(entry.passed for entry in self.entries)

    def entry(self, axiom: int) -> AxiomEntry:
        return next(entry for entry in self.entries if entry.axiom == axiom)

    def failures(self) -> List[AxiomEntry]:
        return [entry for entry in self.entries if not entry.passed]

    def to_dict(self) -> dict:
        return {'palette': self.palette, 'passed': self.passed, 'entries': [entry.to_dict() for entry in self.entries]}


def _hull_probes(space: GradedSpace, seed: int) -> np.ndarray:
    rng = make_rng(seed, stream=720)
    eye = np.eye(space.dim)
    return np.vstack([eye, -eye, rng.standard_normal((1, space.dim))])


def _scale_matrix(P: PaletteFamily) -> np.ndarray:
    """scales[a, g]: doubling scale putting generator a inside generator g."""
    count = len(P.generators)
    scales = np.full((count, count), math.inf)
    for a, body in enumerate(P.generators):
        for g, host in enumerate(P.generators):
            scales[a, g] = host.required_scale(body.extent)
    return scales


def _check_images(P: PaletteFamily, probes: Sequence[GradedOperator], seed: int) -> AxiomEntry:
    for probe in probes:
        if not same_space(probe.source, P.space):
            raise DimensionError(f"Probe {probe.name} does not act on {P.space.model_id}")
        for index, body in enumerate(P.generators):
            for n in range(probe.target.n_max + 1):
                bound = image_bound(probe, body, n, seed=seed)
                if math.isinf(bound):
                    return AxiomEntry(
                        1, 'bounded images', 'fail',
                        f"{probe.name} has unbounded image of generator {index} in seminorm {n}",
                        (probe.name, index, n),
                    )
    return AxiomEntry(1, 'bounded images', 'pass', f"{len(probes)} probes on {len(P.generators)} generators")


def _check_unions(P: PaletteFamily, scales: np.ndarray, depth: int) -> AxiomEntry:
    if 'union' not in P.closure_flags:
        return AxiomEntry(2, 'unions', 'unclaimed', "closure under unions is not claimed")
    if depth < 2:
        return AxiomEntry(2, 'unions', 'pass', "no pairs at depth 1")
    for a, b in combinations(range(len(P.generators)), 2):
        joint = np.maximum(scales[a], scales[b])
        if not any(P.admissible(s) for s in joint):
            return AxiomEntry(2, 'unions', 'fail', f"union of generators {a} and {b} lies in no member", (a, b))
    return AxiomEntry(2, 'unions', 'pass', f"{len(P.generators) * (len(P.generators) - 1) // 2} pairs")


def _check_scalings(P: PaletteFamily, scales: np.ndarray) -> AxiomEntry:
    if not P.scalable:
        return AxiomEntry(3, 'scalings', 'unclaimed', "closure under scalings is not claimed")
    for a in range(len(P.generators)):
        for factor in SCALE_PROBES:
            if not any(P.admissible(_doubling_scale(factor * s, ABSORPTION_CAP)) for s in scales[a]):
                return AxiomEntry(3, 'scalings', 'fail', f"{factor:g} * generator {a} lies in no member", (a, factor))
    return AxiomEntry(3, 'scalings', 'pass', f"factors {list(SCALE_PROBES)}")


def _check_hulls(P: PaletteFamily, scales: np.ndarray, seed: int) -> AxiomEntry:
    if 'hull' not in P.closure_flags:
        return AxiomEntry(4, 'hull with a point', 'unclaimed', "closure under conv(A, v) is not claimed")
    probes = _hull_probes(P.space, seed)
    point_scales = np.array([[host.required_scale(Extent(v[None, :], np.zeros((0, P.space.dim)))) for host in P.generators] for v in probes])
    for a, body in enumerate(P.generators):
        for i, v in enumerate(probes):
            found = False
            for g, host in enumerate(P.generators):
                if host.convex:
                    scale = max(scales[a, g], point_scales[i, g])
                else:
                    scale = host.required_scale(body.extent.with_point(v, steps=(0.25, 0.5, 0.75)))
                if P.admissible(scale):
                    found = True
                    break
            if not found:
                return AxiomEntry(4, 'hull with a point', 'fail', f"conv(generator {a}, probe {i}) lies in no member", (a, i))
    return AxiomEntry(4, 'hull with a point', 'pass', f"{len(probes)} probe points")


def _check_spanning(P: PaletteFamily) -> AxiomEntry:
    rows = [np.vstack([body.extent.points, body.extent.directions]) for body in P.generators]
    stacked = np.vstack(rows)
    rank = int(np.linalg.matrix_rank(stacked)) if stacked.size else 0
    if rank == P.space.dim:
        return AxiomEntry(5, 'spanning union', 'pass', f"rank {rank}")
    return AxiomEntry(5, 'spanning union', 'fail', f"generators span rank {rank} of {P.space.dim}", (rank,))


def check_axioms(P: PaletteFamily, probes: Sequence[GradedOperator], depth: int = 2, seed: int = 0) -> AxiomReport:
    """Check the five palette axioms on the generating family.

    Axiom 1 bounds every probe image in every target seminorm. Axioms 2-4
    look for a member (a generator, scaled when scaling is claimed) holding
    the union, scaling or hull built from generators; ``depth`` 1 skips the
    pairwise unions. Axiom 5 is a spanning check.
    """
    scales = _scale_matrix(P)
    entries = (
        _check_images(P, probes, seed),
        _check_unions(P, scales, depth),
        _check_scalings(P, scales),
        _check_hulls(P, scales, seed),
        _check_spanning(P),
    )
    report = AxiomReport(P.name, entries)
    if report.passed:
        logger.info(f"Palette {P.name or 'custom'}: all axioms pass")
    else:
        logger.warning(f"Palette {P.name or 'custom'}: failing axioms {[entry.axiom for entry in report.failures()]}")
    return report


@dataclass(frozen=True)
class StrongReport:
    strong: bool
    witnesses: Tuple[Tuple[int, int, float, bool], ...]
    first_failure: Optional[int] = None

    def __bool__(self) -> bool:
        return self.strong

    def to_dict(self) -> dict:
        return {
            'strong': self.strong,
            'witnesses': [list(row) for row in self.witnesses],
            'first_failure': self.first_failure,
        }


def _inside_ball(body: ConvexBody, scale: float, radius: float) -> Tuple[bool, bool]:
    """(inside, rigorous) for scale * body inside the open ball B_radius at the origin."""
    space = body.space
    metric = space.metric
    if isinstance(body, MetricBall) and scale == 1.0 and body.reach_bound() <= radius:
        return True, True

    center, radial = body.radial_bounds()
    profile = space.tower.profile(scale * center) + scale * radial
    if float(metric.from_profile(profile)) < radius:
        return True, True

    extent = body.extent
    if not _in_subspace(extent.directions, metric.recession_subspace(radius)):
        return False, True
    points = scale * extent.points
    if len(points) == 0:
        return True, False
    distances = np.atleast_1d(metric.distance_to_zero(points))
    if np.any(distances >= radius):
        return False, True
    return True, False


def is_strong(P: PaletteFamily, seed: int = 0) -> StrongReport:
    """Find, for every dyadic ball B_{2^-n}, a member inside it.

    Scales tried are 1 and then 2^-k down to 2^-40 when scaling is claimed.
    """
    metric = P.space.metric
    scales = [1.0] + ([2.0 ** -k for k in range(1, 41)] if P.scalable else [])
    witnesses = []
    for n in range(metric.dyadic_max + 1):
        radius = 2.0 ** -n
        found = None
        for scale in scales:
            for index, body in enumerate(P.generators):
                inside, rigorous = _inside_ball(body, scale, radius)
                if inside:
                    found = (n, index, scale, rigorous)
                    break
            if found:
                break
        if found is None:
            logger.info(f"Palette {P.name or 'custom'} is not strong: nothing inside B_(2^-{n})")
            return StrongReport(False, tuple(witnesses), n)
        witnesses.append(found)
    return StrongReport(True, tuple(witnesses))


@dataclass(frozen=True)
class MapsIntoReport:
    holds: bool
    certain: bool
    worst: float
    checked: int

    def __bool__(self) -> bool:
        return self.holds

    def to_dict(self) -> dict:
        return {'holds': self.holds, 'certain': self.certain, 'worst': self.worst, 'checked': self.checked}


def _convex_samples(points: np.ndarray, rng: np.random.Generator, count: int) -> np.ndarray:
    if len(points) < 2:
        return points
    weights = rng.dirichlet(np.ones(len(points)), size=count)
    return np.vstack([points, weights @ points])


def maps_into(A: GradedOperator, P: ConvexBody, O: ConvexBody, seed: int = 0, samples: int = 256) -> MapsIntoReport:
    """Whether A maps the body P into the open set O.

    A polytope into a convex O is decided on the vertices; otherwise the
    answer comes from samples and is certain only when it is negative.
    """
    if not same_space(A.source, P.space) or not same_space(A.target, O.space):
        raise DimensionError(f"{A.name} does not map {P.model_id} into {O.model_id}")
    if isinstance(O, VPolytope):
        raise UnsupportedBodyError("Polytopes are closed; use a metric ball or a gauge sublevel as the open set")

    extent = P.extent
    image_directions = A.images(extent.directions) if extent.directions.size else extent.directions
    if image_directions.size and not _in_subspace(image_directions, O.recession()):
        return MapsIntoReport(False, True, math.inf, 0)

    vertex_decided = isinstance(P, VPolytope) and O.convex
    points = extent.points
    if not vertex_decided:
        points = _convex_samples(points, make_rng(seed, stream=730), samples)
    images = A.images(points)

    if isinstance(O, GaugeSublevel):
        lower, upper = O.level_values(images)
        worst = float(np.max(upper)) if len(upper) else 0.0
        holds = worst < 1.0
        if holds:
            certain = vertex_decided
        else:
            certain = bool(len(lower) and np.max(lower) >= 1.0)
    else:
        distances = np.atleast_1d(O.space.metric.distance(images, O.center)) if len(images) else np.zeros(0)
        worst = float(np.max(distances) / O.radius) if len(distances) else 0.0
        holds = worst < 1.0
        certain = not holds
    return MapsIntoReport(holds, certain, worst, len(points))


@dataclass(frozen=True)
class TameSetReport:
    tame: bool
    alpha: float
    D: float
    levels: Tuple[Tuple[int, float, float], ...]

    def __bool__(self) -> bool:
        return self.tame

    def to_dict(self) -> dict:
        return {'tame': self.tame, 'alpha': self.alpha, 'D': self.D, 'levels': [list(row) for row in self.levels]}


def is_tame_set(
    S: Union[ConvexBody, Sequence[GradedVector], np.ndarray],
    alpha: float,
    D: float,
    space: Optional[GradedSpace] = None,
    seed: int = 0,
) -> TameSetReport:
    """mu_n(S) < D alpha^n for every dyadic n of the model, with mu_n taken from its upper bound."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if isinstance(S, ConvexBody):
        space = S.space
        points, directions = S.extent.points, S.extent.directions
    else:
        if space is None:
            if isinstance(S, (list, tuple)) and not S:
                return TameSetReport(True, alpha, D, ())
            raise ValueError("A space is needed for a raw point set")
        points = space.coords_of(S) if len(S) else np.zeros((0, space.dim))
        directions = np.zeros((0, space.dim))
    if len(points) == 0 and len(directions) == 0:
        return TameSetReport(True, alpha, D, ())

    metric = space.metric
    levels = []
    tame = True
    for n in range(metric.dyadic_max + 1):
        bound = D * alpha ** n
        upper = 0.0
        if len(points):
            _, hi = gauge_bounds(points, n, metric, seed)
            upper = float(np.max(hi))
        if len(directions):
            lo, _ = gauge_bounds(directions, n, metric, seed, hull=False)
            if np.max(lo) > 0:
                upper = math.inf
        levels.append((n, upper, bound))
        if not upper < bound:
            tame = False
    return TameSetReport(tame, alpha, D, tuple(levels))


@dataclass(frozen=True, eq=False)
class AABox:
    body: GaugeSublevel
    level_bounds: Tuple[float, ...]
    bounded: bool
    diameter_bound: float

    def to_dict(self) -> dict:
        return {
            'box': self.body.to_dict(),
            'level_bounds': list(self.level_bounds),
            'bounded': self.bounded,
            'diameter_bound': self.diameter_bound,
        }


def aa_box(a: Sequence[float], space: GradedSpace, start: int = 1, measure: str = 'seminorm', seed: int = 0) -> AABox:
    """The box {v : g_i(v) < a_i} for i = start, start + 1, ... with its boundedness report.

    Closed bounded sets are compact at truncation; the report says nothing about the limit.
    """
    a = [float(x) for x in a]
    if not a or any(not x > 0 for x in a):
        raise ValueError("Box bounds must be positive")
    top = space.n_max if measure == 'seminorm' else space.metric.dyadic_max
    start = min(start, top)
    pairs = [(start + i, x) for i, x in enumerate(a) if start + i <= top]
    if len(pairs) < len(a):
        logger.warning(f"aa_box: {len(a) - len(pairs)} bounds exceed the truncation of {space.model_id}")
    body = GaugeSublevel(pairs, space, measure, strict=True, seed=seed)

    _, radial = body.radial_bounds()
    radial = radial.copy()
    identity = GradedOperator.identity(space)
    for k in range(len(radial)):
        if math.isfinite(radial[k]):
            continue
        for j in range(len(radial)):
            if math.isfinite(radial[j]) and radial[j] > 0:
                norm = op_norm(identity, j, k, seed=seed, samples=64).upper
                radial[k] = min(radial[k], radial[j] * norm)
    bounded = body.recession().shape[1] == 0
    diameter = float(space.metric.from_profile(2.0 * radial))
    return AABox(body, tuple(float(x) for x in radial), bounded, diameter)


@dataclass(frozen=True)
class AbsorptionReport:
    index: Optional[int]
    scales: Tuple[float, ...]
    unabsorbed: Optional[int] = None

    @property
    def found(self) -> bool:
        return self.index is not None

    def to_dict(self) -> dict:
        return {'index': self.index, 'scales': list(self.scales), 'unabsorbed': self.unabsorbed}


def absorption_index(chain: Sequence[ConvexBody], P: PaletteFamily, cap: float = ABSORPTION_CAP) -> AbsorptionReport:
    """First (1-based) chain element absorbing every generator of P."""
    if not chain:
        raise ValueError("The chain is empty")
    for i in range(len(chain) - 1):
        if chain[i + 1].required_scale(chain[i].extent, cap=1.0) > 1.0:
            raise ChainOrderError(i)

    unabsorbed = None
    scales: Tuple[float, ...] = ()
    for i, element in enumerate(chain):
        scales = tuple(element.required_scale(body.extent, cap) for body in P.generators)
        missing = [g for g, scale in enumerate(scales) if math.isinf(scale)]
        if not missing:
            logger.debug(f"Chain element {i + 1} absorbs all {len(scales)} generators of {P.name or 'custom'}")
            return AbsorptionReport(i + 1, scales)
        unabsorbed = missing[0]
    return AbsorptionReport(None, scales, unabsorbed)


@dataclass(frozen=True)
class InclusionReport:
    holds: bool
    scales: Tuple[float, ...]
    failures: Tuple[int, ...]

    def __bool__(self) -> bool:
        return self.holds

    def to_dict(self) -> dict:
        return {'holds': self.holds, 'scales': list(self.scales), 'failures': list(self.failures)}


def palette_inclusion(P1: PaletteFamily, P2: PaletteFamily) -> InclusionReport:
    """Every generator of P1 lies in a member of P2."""
    if P1.space.model_id != P2.space.model_id:
        raise DimensionError("Palettes live on different models")
    best = []
    for body in P1.generators:
        candidates = [host.required_scale(body.extent) for host in P2.generators]
        admissible = [scale for scale in candidates if P2.admissible(scale)]
        best.append(min(admissible) if admissible else math.inf)
    failures = tuple(i for i, scale in enumerate(best) if math.isinf(scale))
    return InclusionReport(not failures, tuple(best), failures)


@dataclass(frozen=True)
class PreimageReport:
    found: bool
    level: Optional[int]
    generator: Optional[int]
    scale: Optional[float]
    origin_inside: Optional[bool]
    accepted: int
    violations: int

    @property
    def holds(self) -> bool:
        return self.found and self.violations == 0

    def to_dict(self) -> dict:
        return {
            'found': self.found,
            'level': self.level,
            'generator': self.generator,
            'scale': self.scale,
            'origin_inside': self.origin_inside,
            'accepted': self.accepted,
            'violations': self.violations,
        }


def _neighborhood_points(body: ConvexBody, x_coords: np.ndarray, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Sample of x + scale * body without the point x itself."""
    points = scale * body.extent.points
    if not isinstance(body, VPolytope):
        points = _convex_samples(points, rng, EXTENT_SAMPLES)
    return x_coords + points


def evaluation_preimage_check(
    P: PaletteFamily,
    L: GradedOperator,
    x: GradedVector,
    O: ConvexBody,
    seed: int = 0,
    samples: int = 64,
    require_origin: bool = True,
    candidates: Sequence[GradedOperator] = (),
) -> PreimageReport:
    """Sampled check that ev_x^{-1}(O) holds a neighborhood (x + P_N, O) of L.

    P_N is the strongness witness inside B_{2^-n} for the first n at which L
    maps x + P_N into O. Operators near L (random perturbations, plus the given
    ``candidates``) that map the sampled x + P_N into O are accepted; each
    accepted operator sending x outside O is a violation. With
    ``require_origin`` only generators holding 0 are used as P_N.
    """
    if not same_space(L.source, P.space) or not same_space(L.target, O.space):
        raise DimensionError(f"{L.name} does not map {P.space.model_id} into {O.model_id}")
    for candidate in candidates:
        L._check_parallel(candidate)
    x_coords = P.space.coords_of(x)[0]
    if not O.contains(L.images(x_coords[None, :]))[0]:
        raise ValueError("L(x) must lie in O")

    rng = make_rng(seed, stream=740)
    strong = is_strong(P, seed)
    chosen = None
    for n, index, scale, _ in strong.witnesses:
        body = P.generators[index]
        origin_inside = body.contains_origin()
        if require_origin and not origin_inside:
            continue
        points = _neighborhood_points(body, x_coords, scale, rng)
        if np.all(O.contains(L.images(points))):
            chosen = (n, index, scale, origin_inside, points)
            break
    if chosen is None:
        return PreimageReport(False, None, None, None, None, 0, 0)

    n, index, scale, origin_inside, points = chosen
    accepted = violations = 0

    def check(matrix: np.ndarray) -> bool:
        nonlocal accepted, violations
        if not np.all(O.contains(points @ matrix.T)):
            return False
        accepted += 1
        if not O.contains((matrix @ x_coords)[None, :])[0]:
            violations += 1
        return True

    for candidate in candidates:
        check(candidate.matrix)
    for _ in range(samples):
        perturbation = rng.standard_normal(L.matrix.shape)
        t = 1.0
        for _ in range(30):
            if check(L.matrix + t * perturbation):
                break
            t *= 0.5
    if violations:
        logger.warning(f"Evaluation preimage check: {violations} of {accepted} operators map x + P_{n} into O but not x")
    logger.debug(f"Evaluation preimage check: level {n}, generator {index}, {accepted} accepted, {violations} violations")
    return PreimageReport(True, n, index, scale, origin_inside, accepted, violations)
