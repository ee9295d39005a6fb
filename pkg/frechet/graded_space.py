import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import eigvalsh, null_space
from scipy.optimize import linprog

from frechet.errors import DimensionError, LevelOutOfRangeError

logger = logging.getLogger(__name__)

PHI_KINDS = ('rational', 'arctan', 'tanh')
METRIC_MODES = ('sum_form', 'sqrt_scalar')
BLOCK_KINDS = ('max', 'euclidean')
BOUND_KINDS = ('exact', 'upper', 'lower', 'bracket')

DEFAULT_TOLERANCE = 1e-9
RAY_MAX_ITER = 60
_EXPAND_MAX_ITER = 2100
_U64 = (1 << 64) - 1


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by (stream, seed)."""
    key = ((int(stream) & _U64) << 64) | (int(seed) & _U64)
    return np.random.Generator(np.random.Philox(key=key))


def _scalar_or_array(values: np.ndarray):
    return float(values) if np.ndim(values) == 0 else values


@dataclass(frozen=True)
class GradingConfig:
    """Top level, weights and shaping function of a sum-form metric.

    ``dyadic_max`` bounds the dyadic ball index n of B_{2^-n}; it defaults to
    ``n_max`` and is raised for single-level models, whose balls shrink past
    the grading.
    """
    n_max: int
    weights: Optional[Tuple[float, ...]] = None
    phi_kind: str = 'rational'
    phi_scale: float = 1.0
    dyadic_max: Optional[int] = None

    def __post_init__(self):
        if self.n_max < 0:
            raise ValueError(f"n_max must be nonnegative, got {self.n_max}")
        if self.phi_kind not in PHI_KINDS:
            raise ValueError(f"Unknown shaping function '{self.phi_kind}', expected one of {PHI_KINDS}")
        if not self.phi_scale > 0:
            raise ValueError(f"phi_scale must be positive, got {self.phi_scale}")

        weights = self.weights
        if weights is None:
            weights = tuple(2.0 ** -n for n in range(self.n_max + 1))
        weights = tuple(float(w) for w in weights)
        if len(weights) != self.n_max + 1:
            raise ValueError(f"Expected {self.n_max + 1} weights, got {len(weights)}")
        if any(not math.isfinite(w) or w <= 0 for w in weights):
            raise ValueError("Weights must be finite and positive")
        object.__setattr__(self, 'weights', weights)

        dyadic_max = self.n_max if self.dyadic_max is None else int(self.dyadic_max)
        if dyadic_max < 0:
            raise ValueError(f"dyadic_max must be nonnegative, got {dyadic_max}")
        object.__setattr__(self, 'dyadic_max', dyadic_max)

    @property
    def weight_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    @property
    def total_weight(self) -> float:
        return float(sum(self.weights))

    def tail_weights(self) -> np.ndarray:
        """T_k = sum of w_i over i >= k."""
        return np.cumsum(self.weight_array[::-1])[::-1]

    def phi(self, t):
        t = np.asarray(t, dtype=float) * self.phi_scale
        with np.errstate(invalid='ignore', divide='ignore'):
            if self.phi_kind == 'rational':
                out = np.where(np.isinf(t), 1.0, t / (1.0 + t))
            elif self.phi_kind == 'arctan':
                out = (2.0 / math.pi) * np.arctan(t)
            else:
                out = np.tanh(t)
        return _scalar_or_array(out)

    def phi_inverse(self, y):
        """Inverse shaping function; values >= 1 map to +inf."""
        y = np.asarray(y, dtype=float)
        inside = (y > 0) & (y < 1)
        safe = np.where(inside, y, 0.5)
        if self.phi_kind == 'rational':
            raw = safe / (1.0 - safe)
        elif self.phi_kind == 'arctan':
            raw = np.tan(0.5 * math.pi * safe)
        else:
            raw = np.arctanh(safe)
        out = np.where(inside, raw / self.phi_scale, np.where(y <= 0, 0.0, np.inf))
        return _scalar_or_array(out)

    def phi_prime_zero(self) -> float:
        if self.phi_kind == 'arctan':
            return 2.0 * self.phi_scale / math.pi
        return float(self.phi_scale)

    def check_phi(self, grid: Optional[np.ndarray] = None) -> Dict[str, bool]:
        """Sampled check of phi(0)=0, monotonicity, subadditivity and the bound 1."""
        if grid is None:
            grid = np.concatenate(([0.0], np.logspace(-6, 1, 200)))
        grid = np.sort(np.asarray(grid, dtype=float))
        values = self.phi(grid)
        a, b = np.meshgrid(grid, grid)
        return {
            'zero': self.phi(0.0) == 0.0,
            'increasing': bool(np.all(np.diff(values) > 0)),
            'subadditive': bool(np.all(self.phi(a + b) <= self.phi(a) + self.phi(b) + 1e-15)),
            'bounded': bool(np.all(values <= 1.0)),
        }

    def to_dict(self) -> dict:
        return {
            'n_max': self.n_max,
            'weights': list(self.weights),
            'phi': self.phi_kind,
            'phi_scale': self.phi_scale,
            'dyadic_max': self.dyadic_max,
        }


@dataclass(frozen=True, eq=False)
class SeminormBlock:
    """One seminorm v -> ||L v|| with the Euclidean or the max norm."""
    matrix: np.ndarray
    kind: str = 'max'

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise ValueError(f"Unknown seminorm kind '{self.kind}'")
        matrix = np.array(self.matrix, dtype=float, ndmin=2)
        if matrix.ndim != 2 or not np.all(np.isfinite(matrix)):
            raise ValueError("Seminorm matrix must be a finite 2-d array")
        matrix.setflags(write=False)
        object.__setattr__(self, 'matrix', matrix)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    def evaluate(self, coords: np.ndarray) -> np.ndarray:
        images = np.asarray(coords, dtype=float) @ self.matrix.T
        if self.rows == 0:
            return np.zeros(images.shape[:-1])
        if self.kind == 'euclidean':
            return np.linalg.norm(images, axis=-1)
        return np.max(np.abs(images), axis=-1)

    def form(self) -> np.ndarray:
        return self.matrix.T @ self.matrix


def _loewner_dominates(upper: SeminormBlock, lower: SeminormBlock) -> bool:
    diff = upper.form() - lower.form()
    scale = max(1.0, float(np.max(np.abs(upper.form()))))
    return float(eigvalsh(diff)[0]) >= -1e-12 * scale


class SeminormFamily:
    """Finite increasing tower of seminorms on a coordinate model.

    With ``monotonized`` the level n seminorm is max_{k<=n} of the blocks;
    Euclidean blocks that dominate their predecessors in the Loewner order
    stay single blocks so that their norms remain exactly computable.
    """

    def __init__(self, blocks: Sequence[SeminormBlock], monotonized: bool = True, model_id: str = 'model'):
        if not blocks:
            raise ValueError("A seminorm family needs at least one level")
        dims = {block.dim for block in blocks}
        if len(dims) != 1:
            raise DimensionError(f"Seminorm blocks disagree on dimension: {sorted(dims)}")

        self.model_id = model_id
        self.blocks: Tuple[SeminormBlock, ...] = tuple(blocks)
        self.dim = dims.pop()
        self.n_max = len(self.blocks) - 1
        self.monotonized = monotonized
        self._levels = self._compose_levels()

    def _compose_levels(self) -> Tuple[Tuple[int, ...], ...]:
        if not self.monotonized:
            return tuple((n,) for n in range(len(self.blocks)))

        levels: List[Tuple[int, ...]] = [(0,)]
        for n in range(1, len(self.blocks)):
            previous = levels[-1]
            block = self.blocks[n]
            if (
                len(previous) == 1
                and block.kind == 'euclidean'
                and self.blocks[previous[0]].kind == 'euclidean'
                and _loewner_dominates(block, self.blocks[previous[0]])
            ):
                levels.append((n,))
            else:
                levels.append(previous + (n,))
        return tuple(levels)

    def check_level(self, n: int):
        if not 0 <= n <= self.n_max:
            raise LevelOutOfRangeError(n, self.n_max)

    def level_blocks(self, n: int) -> Tuple[SeminormBlock, ...]:
        self.check_level(n)
        return tuple(self.blocks[k] for k in self._levels[n])

    def level_kind(self, n: int) -> str:
        blocks = self.level_blocks(n)
        if len(blocks) == 1 and blocks[0].kind == 'euclidean':
            return 'euclidean'
        if all(block.kind == 'max' for block in blocks):
            return 'max'
        return 'mixed'

    def stacked_matrix(self, n: int) -> np.ndarray:
        return np.vstack([block.matrix for block in self.level_blocks(n)])

    def kernel(self, n: int) -> np.ndarray:
        """Orthonormal basis (columns) of the kernel of level n."""
        return null_space(self.stacked_matrix(n))

    def evaluate(self, coords: np.ndarray, n: int) -> np.ndarray:
        values = [block.evaluate(coords) for block in self.level_blocks(n)]
        return _scalar_or_array(np.max(np.stack(values), axis=0))

    def profile(self, coords: np.ndarray) -> np.ndarray:
        """All level values; shape (N+1,) for one vector, (N+1, S) for a batch."""
        coords = np.asarray(coords, dtype=float)
        if coords.shape[-1] != self.dim:
            raise DimensionError(f"Expected vectors of dimension {self.dim}, got {coords.shape[-1]}")
        block_values = np.stack([block.evaluate(coords) for block in self.blocks])
        return np.stack([np.max(block_values[list(level)], axis=0) for level in self._levels])

    def top_values(self, coords: np.ndarray) -> np.ndarray:
        return np.max(self.profile(coords), axis=0)

    def check_properties(self, seed: int = 0, samples: int = 1000, tolerance: float = DEFAULT_TOLERANCE) -> Dict[str, int]:
        """Count sampled violations of homogeneity, triangle inequality and monotonicity."""
        rng = make_rng(seed, stream=11)
        u = rng.standard_normal((samples, self.dim))
        v = rng.standard_normal((samples, self.dim))
        lam = rng.uniform(-3.0, 3.0, size=samples)

        pu, pv = self.profile(u), self.profile(v)
        scale = 1.0 + pu + pv
        homogeneity = np.abs(self.profile(lam[:, None] * u) - np.abs(lam) * pu) > tolerance * scale
        triangle = self.profile(u + v) > pu + pv + tolerance * scale
        monotone = np.diff(pu, axis=0) < -tolerance * scale[1:]
        return {
            'homogeneity': int(np.count_nonzero(homogeneity)),
            'triangle': int(np.count_nonzero(triangle)),
            'monotone': int(np.count_nonzero(monotone)) if self.monotonized else 0,
        }

    def to_spec(self) -> List[dict]:
        return [{'kind': block.kind, 'shape': list(block.matrix.shape)} for block in self.blocks]


@dataclass(frozen=True, eq=False)
class FrechetMetric:
    """Translation-invariant metric built from a seminorm tower."""
    tower: SeminormFamily
    config: GradingConfig
    mode: str = 'sum_form'

    def __post_init__(self):
        if self.mode not in METRIC_MODES:
            raise ValueError(f"Unknown metric mode '{self.mode}'")
        if self.mode == 'sum_form' and self.config.n_max != self.tower.n_max:
            raise DimensionError(
                f"Grading has {self.config.n_max + 1} weights but the tower has {self.tower.n_max + 1} levels"
            )
        if self.mode == 'sqrt_scalar' and (self.tower.dim != 1 or self.tower.n_max != 0):
            raise DimensionError("The square-root metric lives on the one-level scalar model")

    @property
    def dyadic_max(self) -> int:
        return self.config.dyadic_max

    @property
    def sup_distance(self) -> float:
        return self.config.total_weight if self.mode == 'sum_form' else math.inf

    def check_dyadic(self, n: int):
        if not 0 <= n <= self.dyadic_max:
            raise LevelOutOfRangeError(n, self.dyadic_max, what='dyadic index')

    def from_profile(self, profile: np.ndarray):
        profile = np.asarray(profile, dtype=float)
        if self.mode == 'sqrt_scalar':
            return _scalar_or_array(np.sqrt(profile[0]))
        return _scalar_or_array(np.tensordot(self.config.weight_array, self.config.phi(profile), axes=(0, 0)))

    def distance_to_zero(self, coords: np.ndarray):
        return self.from_profile(self.tower.profile(coords))

    def distance(self, u: np.ndarray, v: np.ndarray):
        return self.distance_to_zero(np.asarray(u, dtype=float) - np.asarray(v, dtype=float))

    def reach(self, profile: np.ndarray):
        """sup over s of d(s u, 0) for the direction with the given profile."""
        profile = np.asarray(profile, dtype=float)
        active = profile > 0
        if self.mode == 'sqrt_scalar':
            return _scalar_or_array(np.where(active[0], np.inf, 0.0))
        return _scalar_or_array(np.tensordot(self.config.weight_array, active.astype(float), axes=(0, 0)))

    def ray_radius(self, profile: np.ndarray, radius: float):
        """Largest s found with d(s u, 0) < radius; +inf when the whole ray stays inside."""
        profile = np.asarray(profile, dtype=float)
        single = profile.ndim == 1
        if single:
            profile = profile[:, None]

        if self.mode == 'sqrt_scalar':
            with np.errstate(divide='ignore'):
                result = np.where(profile[0] > 0, radius ** 2 / np.where(profile[0] > 0, profile[0], 1.0), np.inf)
            return float(result[0]) if single else result

        def dist(s: np.ndarray) -> np.ndarray:
            return np.tensordot(self.config.weight_array, self.config.phi(profile * s), axes=(0, 0))

        bounded = np.asarray(self.reach(profile)) > radius
        top = np.max(profile, axis=0)
        hi = np.where(bounded, 1.0 / np.where(top > 0, top, 1.0), np.inf)
        lo = np.zeros_like(hi)

        # Grow until the ray leaves the ball
        for _ in range(_EXPAND_MAX_ITER):
            grow = bounded & (dist(np.where(bounded, hi, 0.0)) < radius)
            if not grow.any():
                break
            lo = np.where(grow, hi, lo)
            hi = np.where(grow, 2.0 * hi, hi)

        # Shrink while the half point is still outside
        for _ in range(_EXPAND_MAX_ITER):
            half = np.where(bounded, 0.5 * hi, 0.0)
            shrink = bounded & (lo == 0) & (dist(half) >= radius)
            if not shrink.any():
                break
            hi = np.where(shrink, half, hi)
        lo = np.where(bounded & (lo == 0), 0.5 * hi, lo)

        for _ in range(RAY_MAX_ITER):
            mid = np.where(bounded, 0.5 * (lo + hi), 0.0)
            inside = dist(mid) < radius
            lo = np.where(bounded & inside, mid, lo)
            hi = np.where(bounded & ~inside, mid, hi)

        result = np.where(bounded, lo, np.inf)
        return float(result[0]) if single else result

    def outer_cylinder(self, radius: float) -> List[Tuple[int, float]]:
        """Levels k and radii rho_k with B_radius contained in {||x||_k <= rho_k}."""
        if self.mode == 'sqrt_scalar':
            return [(0, radius ** 2)]
        tails = self.config.tail_weights() if self.tower.monotonized else self.config.weight_array
        return [
            (k, float(self.config.phi_inverse(radius / tail)))
            for k, tail in enumerate(tails)
            if radius < tail
        ]

    def inner_radius(self, radius: float) -> float:
        """sigma with {top seminorm < sigma} contained in B_radius."""
        if self.mode == 'sqrt_scalar':
            return radius ** 2
        return float(self.config.phi_inverse(radius / self.config.total_weight))

    def strictness_limit(self, profile: np.ndarray) -> float:
        """Limit of d(r v, 0)/r as r -> 0 (phi is concave for every supported kind)."""
        profile = np.asarray(profile, dtype=float)
        if self.mode == 'sqrt_scalar':
            return math.inf if profile[0] > 0 else 0.0
        return self.config.phi_prime_zero() * float(self.config.weight_array @ profile)

    def recession_subspace(self, radius: float) -> np.ndarray:
        """Directions (columns) whose whole line lies in the ball of the given radius."""
        if self.mode == 'sqrt_scalar':
            return np.zeros((1, 0))
        tails = self.config.tail_weights()
        for k0, tail in enumerate(tails):
            if tail <= radius:
                break
        else:
            return np.zeros((self.tower.dim, 0))
        if k0 == 0:
            return np.eye(self.tower.dim)
        blocks = [block.matrix for block in self.tower.blocks[:k0]]
        return null_space(np.vstack(blocks))

    def to_dict(self) -> dict:
        return {'mode': self.mode, 'grading': self.config.to_dict(), 'monotonized': self.tower.monotonized}


@dataclass(frozen=True, eq=False)
class GradedVector:
    coords: np.ndarray
    model_id: str

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float).reshape(-1)
        if not np.all(np.isfinite(coords)):
            raise ValueError("Vector entries must be finite")
        coords.setflags(write=False)
        object.__setattr__(self, 'coords', coords)

    @property
    def dim(self) -> int:
        return self.coords.shape[0]

    def _check(self, other: 'GradedVector'):
        if other.model_id != self.model_id or other.dim != self.dim:
            raise DimensionError(f"Cannot combine vectors of {self.model_id} and {other.model_id}")

    def __add__(self, other: 'GradedVector') -> 'GradedVector':
        self._check(other)
        return GradedVector(self.coords + other.coords, self.model_id)

    def __sub__(self, other: 'GradedVector') -> 'GradedVector':
        self._check(other)
        return GradedVector(self.coords - other.coords, self.model_id)

    def __mul__(self, scalar: float) -> 'GradedVector':
        return GradedVector(float(scalar) * self.coords, self.model_id)

    __rmul__ = __mul__

    def __neg__(self) -> 'GradedVector':
        return GradedVector(-self.coords, self.model_id)


@dataclass(frozen=True, eq=False)
class GradedSpace:
    """A coordinate model with its tower and metric."""
    model_id: str
    metric: FrechetMetric

    def __post_init__(self):
        if self.metric.tower.model_id != self.model_id:
            raise DimensionError(f"Tower belongs to {self.metric.tower.model_id}, not {self.model_id}")

    @property
    def tower(self) -> SeminormFamily:
        return self.metric.tower

    @property
    def dim(self) -> int:
        return self.tower.dim

    @property
    def n_max(self) -> int:
        return self.tower.n_max

    def vector(self, coords) -> GradedVector:
        vector = GradedVector(coords, self.model_id)
        if vector.dim != self.dim:
            raise DimensionError(f"{self.model_id} has dimension {self.dim}, got {vector.dim}")
        return vector

    def zero(self) -> GradedVector:
        return self.vector(np.zeros(self.dim))

    def basis(self, k: int) -> GradedVector:
        coords = np.zeros(self.dim)
        coords[k] = 1.0
        return self.vector(coords)

    def coords_of(self, target: Union[GradedVector, np.ndarray, Sequence]) -> np.ndarray:
        """Coordinates of a vector or a point set, as a 2-d array (S, D)."""
        return _as_points(target, self.metric)


@dataclass(frozen=True)
class GaugeValue:
    lower: float
    upper: float
    bound_kind: str = 'bracket'
    tolerance: float = DEFAULT_TOLERANCE

    def __post_init__(self):
        if self.bound_kind not in BOUND_KINDS:
            raise ValueError(f"Unknown bound kind '{self.bound_kind}'")
        lower, upper = float(self.lower), float(self.upper)
        if lower < 0 or math.isnan(lower) or math.isnan(upper):
            raise ValueError(f"Invalid gauge bounds [{lower}, {upper}]")
        if lower > upper + self.tolerance * max(1.0, abs(upper)):
            raise ValueError(f"Gauge lower bound {lower} exceeds upper bound {upper}")
        if self.bound_kind == 'exact':
            lower = upper
        object.__setattr__(self, 'lower', lower)
        object.__setattr__(self, 'upper', max(lower, upper))

    @classmethod
    def exact(cls, value: float, tolerance: float = DEFAULT_TOLERANCE) -> 'GaugeValue':
        return cls(value, value, 'exact', tolerance)

    @classmethod
    def bracket(cls, lower: float, upper: float, tolerance: float = DEFAULT_TOLERANCE) -> 'GaugeValue':
        """Tag a bracket as exact once its width is within tolerance."""
        lower = float(lower)
        upper = max(float(upper), lower)
        if math.isinf(lower):
            return cls(math.inf, math.inf, 'lower', tolerance)
        if math.isfinite(upper) and upper - lower <= tolerance * max(1.0, upper):
            return cls(upper, upper, 'exact', tolerance)
        return cls(lower, upper, 'bracket', tolerance)

    @property
    def value(self) -> float:
        return self.lower if self.bound_kind == 'lower' else self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def is_exact(self) -> bool:
        return self.bound_kind == 'exact'

    def scaled(self, factor: float) -> 'GaugeValue':
        factor = abs(float(factor))
        if factor == 0:
            return GaugeValue.exact(0.0, self.tolerance)
        return GaugeValue(self.lower * factor, self.upper * factor, self.bound_kind, self.tolerance)

    def to_dict(self) -> dict:
        return {
            'value': self.value,
            'bound_kind': self.bound_kind,
            'lower': self.lower,
            'upper': self.upper,
            'tolerance': self.tolerance,
        }


def _check_same_model(*items):
    ids = {item.model_id for item in items}
    if len(ids) != 1:
        raise DimensionError(f"Mixed models: {sorted(ids)}")


def metric_distance(u: GradedVector, v: GradedVector, m: FrechetMetric) -> float:
    """d(u, v), computed from u - v only."""
    _check_same_model(u, v, m.tower)
    if u.dim != m.tower.dim or v.dim != m.tower.dim:
        raise DimensionError(f"Vectors of dimension {u.dim}/{v.dim} on a model of dimension {m.tower.dim}")
    return float(m.distance(u.coords, v.coords))


def _as_points(target, m: FrechetMetric) -> np.ndarray:
    if isinstance(target, GradedVector):
        _check_same_model(target, m.tower)
        return target.coords[None, :]
    if isinstance(target, (list, tuple)) and target and isinstance(target[0], GradedVector):
        _check_same_model(*target, m.tower)
        return np.vstack([item.coords for item in target])
    points = np.asarray(target, dtype=float)
    if points.size == 0:
        return np.zeros((0, m.tower.dim))
    points = np.atleast_2d(points)
    if points.shape[1] != m.tower.dim:
        raise DimensionError(f"Expected points of dimension {m.tower.dim}, got {points.shape[1]}")
    return points


def cylinder_gauge(profiles: np.ndarray, cylinder: List[Tuple[int, float]]) -> np.ndarray:
    """Gauge of the outer cylinder of a ball; a lower bound for the hull gauge."""
    profiles = np.asarray(profiles, dtype=float)
    lower = np.zeros(profiles.shape[1])
    for k, rho in cylinder:
        with np.errstate(divide='ignore', invalid='ignore'):
            ratio = np.where(profiles[k] > 0, profiles[k] / rho, 0.0)
        lower = np.maximum(lower, ratio)
    return lower


def star_gauge(profiles: np.ndarray, radius: float, m: FrechetMetric) -> np.ndarray:
    """Gauge of the ball itself (it is star-shaped), from ray bisection."""
    s = np.atleast_1d(m.ray_radius(profiles, radius))
    with np.errstate(divide='ignore'):
        return np.where(np.isinf(s), 0.0, 1.0 / s)


def boundary_samples(m: FrechetMetric, n: int, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Points on the boundary of B_{2^-n} and directions of lines inside it."""
    dim = m.tower.dim
    count = 2 * dim * (n + 4)
    rng = make_rng(seed, stream=1000 + n)
    directions = np.vstack([np.eye(dim), rng.standard_normal((max(count - dim, 0), dim))])
    s = np.atleast_1d(m.ray_radius(m.tower.profile(directions), 2.0 ** -n))
    finite = np.isfinite(s)
    return s[finite, None] * directions[finite], directions[~finite]


def hull_gauge(points: np.ndarray, n: int, m: FrechetMetric, seed: int = 0) -> np.ndarray:
    """Gauge of the convex hull of sampled ball points, one LP per point (upper bound)."""
    boundary, recession = boundary_samples(m, n, seed)
    spanning = np.hstack([boundary.T, -boundary.T, recession.T, -recession.T])
    cost = np.concatenate([np.ones(2 * len(boundary)), np.zeros(2 * len(recession))])
    result = np.full(len(points), math.inf)
    if spanning.shape[1] == 0:
        return result
    for i, y in enumerate(points):
        if not np.any(y):
            result[i] = 0.0
            continue
        lp = linprog(cost, A_eq=spanning, b_eq=y, bounds=(0, None), method='highs')
        if lp.status == 0:
            result[i] = max(float(lp.fun), 0.0)
    return result


def gauge_bounds(
    points: np.ndarray,
    n: int,
    m: FrechetMetric,
    seed: int = 0,
    hull: bool = True,
    tolerance: float = DEFAULT_TOLERANCE,
) -> Tuple[np.ndarray, np.ndarray]:
    """Pointwise lower and upper bounds of mu_n."""
    m.check_dyadic(n)
    points = _as_points(points, m)
    if len(points) == 0:
        return np.zeros(0), np.zeros(0)

    radius = 2.0 ** -n
    profiles = m.tower.profile(points)
    lower = cylinder_gauge(profiles, m.outer_cylinder(radius))
    upper = star_gauge(profiles, radius, m)

    open_points = upper - lower > tolerance * np.maximum(1.0, upper)
    if hull and open_points.any():
        refined = hull_gauge(points[open_points], n, m, seed)
        upper[open_points] = np.minimum(upper[open_points], refined)
    return lower, np.maximum(upper, lower)


def gauge(
    target,
    n: int,
    m: FrechetMetric,
    seed: int = 0,
    hull: bool = True,
    tolerance: float = DEFAULT_TOLERANCE,
) -> GaugeValue:
    """Minkowski gauge mu_n of a point or a finite point set.

    The bracket runs from the cylinder gauge (the cylinder contains c(n))
    to the smaller of the star gauge and the sampled hull gauge.
    """
    m.check_dyadic(n)
    points = _as_points(target, m)
    if len(points) == 0:
        return GaugeValue.exact(0.0, tolerance)

    lower, upper = gauge_bounds(points, n, m, seed, hull, tolerance)
    value = GaugeValue.bracket(float(np.max(lower)), float(np.max(upper)), tolerance)
    if not value.is_exact:
        logger.debug(f"Gauge mu_{n} bracket [{value.lower:.6g}, {value.upper:.6g}] on {len(points)} points")
    return value


@dataclass(frozen=True)
class StrictnessReport:
    value: float
    argmax_r: float
    limit: float
    tail: Tuple[Tuple[float, float], ...]

    def to_dict(self) -> dict:
        return {
            'value': self.value,
            'argmax_r': self.argmax_r,
            'limit': self.limit,
            'tail': [list(pair) for pair in self.tail],
        }


def default_r_grid() -> np.ndarray:
    return np.logspace(-12, 2, 141)


def strictness(v: GradedVector, m: FrechetMetric, r_grid: Optional[np.ndarray] = None) -> StrictnessReport:
    """Grid estimate of S(v) = sup_r d(r v, 0)/r, with its small-r tail and exact limit."""
    _check_same_model(v, m.tower)
    grid = default_r_grid() if r_grid is None else np.sort(np.asarray(r_grid, dtype=float))
    if grid.size == 0 or np.any(grid <= 0):
        raise ValueError("r_grid must be nonempty and positive")

    profile = m.tower.profile(v.coords)
    if not np.any(profile > 0):
        return StrictnessReport(0.0, float(grid[0]), 0.0, tuple((float(r), 0.0) for r in grid[:5]))

    ratios = np.atleast_1d(m.from_profile(np.outer(profile, grid))) / grid
    best = int(np.argmax(ratios))
    tail = tuple((float(r), float(q)) for r, q in zip(grid[:5], ratios[:5]))
    return StrictnessReport(float(ratios[best]), float(grid[best]), m.strictness_limit(profile), tail)


@dataclass(frozen=True)
class ScalarBound:
    holds: bool
    margin: float
    multiplier: int


def scalar_bound_check(v: GradedVector, s: float, m: FrechetMetric, tolerance: float = 1e-12) -> ScalarBound:
    """Check d(s v, 0) <= ceil(s) d(v, 0)."""
    _check_same_model(v, m.tower)
    if not s > 0:
        raise ValueError(f"s must be positive, got {s}")
    multiplier = math.ceil(s)
    lhs = float(m.distance_to_zero(s * v.coords))
    rhs = multiplier * float(m.distance_to_zero(v.coords))
    margin = rhs - lhs
    return ScalarBound(margin >= -tolerance, margin, multiplier)


@dataclass(frozen=True, eq=False)
class RayProfile:
    s: np.ndarray
    values: np.ndarray
    slopes: np.ndarray

    def rows(self) -> List[Tuple[float, float, float]]:
        return [(float(a), float(b), float(c)) for a, b, c in zip(self.s, self.values, self.slopes)]


def ray_profile(v: GradedVector, m: FrechetMetric, grid: np.ndarray) -> RayProfile:
    """Sampled m_v(s) = d(s v, 0) with finite-difference slopes; diagnostic only."""
    _check_same_model(v, m.tower)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be positive and strictly increasing")
    profile = m.tower.profile(v.coords)
    values = np.atleast_1d(m.from_profile(np.outer(profile, grid)))
    slopes = np.gradient(values, grid) if grid.size > 1 else np.full(1, np.nan)
    return RayProfile(grid, values, slopes)


def check_metric_axioms(m: FrechetMetric, seed: int = 0, samples: int = 10_000, tolerance: float = 1e-12) -> Dict[str, int]:
    """Count sampled violations of the metric axioms and of circled balls."""
    rng = make_rng(seed, stream=12)
    dim = m.tower.dim
    scales = 10.0 ** rng.uniform(-3, 2, size=(samples, 1))
    u = scales * rng.standard_normal((samples, dim))
    v = scales * rng.standard_normal((samples, dim))
    w = scales * rng.standard_normal((samples, dim))
    lam = rng.uniform(-1.0, 1.0, size=(samples, 1))

    duv, dvu = m.distance(u, v), m.distance(v, u)
    duw, dwv = m.distance(u, w), m.distance(w, v)
    dv0 = m.distance_to_zero(v)
    return {
        'symmetry': int(np.count_nonzero(np.abs(duv - dvu) > tolerance)),
        'identity': int(np.count_nonzero(m.distance(u, u) != 0)),
        'triangle': int(np.count_nonzero(duv > duw + dwv + tolerance)),
        'circled': int(np.count_nonzero(m.distance_to_zero(lam * v) > dv0 + tolerance)),
        'translation': int(np.count_nonzero(np.abs(m.distance(u + w, v + w) - duv) > tolerance)),
    }
