import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
from lumino.stream_cert.constants import CONCAVITY_TOLERANCE
from lumino.stream_cert.error_handler import DomainError, UnsupportedOperationError
from lumino.stream_cert.special import erf_approx

_TWO_SQRT2 = 2.0 * math.sqrt(2.0)

# Sampler signature for empirical smoothing kinds: (item, rng) -> noisy item
Sampler = Callable[[np.ndarray, np.random.Generator], np.ndarray]
_SAMPLERS: Dict[str, Sampler] = {}


class SmoothingKind(str, Enum):
    GAUSSIAN = 'gaussian'
    UNIFORM = 'uniform'
    EMPIRICAL = 'empirical'


class Metric(str, Enum):
    L2 = 'l2'
    L1 = 'l1'


def distance(metric: Metric, x: np.ndarray, x_prime: np.ndarray) -> float:
    """Distance d(x, x') between two stream items under the given metric"""
    diff = np.asarray(x, dtype=np.float64) - np.asarray(x_prime, dtype=np.float64)
    if Metric(metric) is Metric.L1:
        return float(np.sum(np.abs(diff)))
    return float(np.sqrt(np.sum(diff * diff)))


@dataclass(frozen=True)
class PsiEnvelope:
    """Concave, nondecreasing piecewise-linear ψ given by its knots

    The first knot is (0, 0); values are held constant past the last knot.
    ``clamped`` is set when the envelope was built from TV estimates above 1.
    """
    knots: Tuple[Tuple[float, float], ...]
    clamped: bool = False

    def __post_init__(self):
        knots = tuple((float(d), float(v)) for d, v in self.knots)
        object.__setattr__(self, 'knots', knots)
        if not knots or knots[0] != (0.0, 0.0):
            raise DomainError("envelope must start at the knot (0, 0)")
        for (d0, v0), (d1, v1) in zip(knots, knots[1:]):
            if not d1 > d0:
                raise DomainError(f"knot distances must be strictly increasing ({d0} -> {d1})")
            if v1 < v0 - CONCAVITY_TOLERANCE:
                raise DomainError(f"envelope must be nondecreasing ({v0} -> {v1})")
        for _, v in knots:
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"envelope values must lie in [0, 1], got {v}")
        slopes = self.slopes()
        for s0, s1 in zip(slopes, slopes[1:]):
            if s1 > s0 + CONCAVITY_TOLERANCE:
                raise DomainError("envelope is not concave (slopes increase)")

    def slopes(self) -> Tuple[float, ...]:
        return tuple((v1 - v0) / (d1 - d0)
                     for (d0, v0), (d1, v1) in zip(self.knots, self.knots[1:]))

    def __call__(self, d: float) -> float:
        distances = [k[0] for k in self.knots]
        values = [k[1] for k in self.knots]
        return float(np.interp(d, distances, values))


@dataclass(frozen=True)
class SmoothingSpec:
    """Smoothing distribution family paired with its distance metric

    Use the gaussian/uniform/empirical constructors rather than building
    the dataclass directly.
    """
    kind: SmoothingKind
    metric: Metric
    sigma: Optional[float] = None
    b: Optional[float] = None
    envelope: Optional[PsiEnvelope] = None
    sampler_id: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, 'kind', SmoothingKind(self.kind))
        object.__setattr__(self, 'metric', Metric(self.metric))
        if self.kind is SmoothingKind.GAUSSIAN:
            if self.sigma is None or not self.sigma > 0 or not math.isfinite(self.sigma):
                raise DomainError(f"gaussian smoothing needs sigma > 0, got {self.sigma}")
            if self.metric is not Metric.L2:
                raise DomainError("gaussian smoothing pairs with the l2 metric")
        elif self.kind is SmoothingKind.UNIFORM:
            if self.b is None or not self.b > 0 or not math.isfinite(self.b):
                raise DomainError(f"uniform smoothing needs b > 0, got {self.b}")
            if self.metric is not Metric.L1:
                raise DomainError("uniform smoothing pairs with the l1 metric")
        elif self.envelope is None:
            raise DomainError("empirical smoothing needs a psi envelope")

    @classmethod
    def gaussian(cls, sigma: float) -> 'SmoothingSpec':
        return cls(kind=SmoothingKind.GAUSSIAN, metric=Metric.L2, sigma=float(sigma))

    @classmethod
    def uniform(cls, b: float) -> 'SmoothingSpec':
        return cls(kind=SmoothingKind.UNIFORM, metric=Metric.L1, b=float(b))

    @classmethod
    def empirical(cls, envelope: PsiEnvelope, metric: Metric = Metric.L2,
                  sampler_id: Optional[str] = None) -> 'SmoothingSpec':
        return cls(kind=SmoothingKind.EMPIRICAL, metric=Metric(metric),
                   envelope=envelope, sampler_id=sampler_id)

    def distance(self, x: np.ndarray, x_prime: np.ndarray) -> float:
        return distance(self.metric, x, x_prime)

    def to_dict(self) -> dict:
        data = {'kind': self.kind.value, 'metric': self.metric.value}
        if self.sigma is not None:
            data['sigma'] = self.sigma
        if self.b is not None:
            data['b'] = self.b
        if self.envelope is not None:
            data['envelope'] = [list(k) for k in self.envelope.knots]
        if self.sampler_id is not None:
            data['sampler_id'] = self.sampler_id
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'SmoothingSpec':
        kind = SmoothingKind(data.get('kind', 'gaussian'))
        if kind is SmoothingKind.GAUSSIAN:
            return cls.gaussian(data['sigma'])
        if kind is SmoothingKind.UNIFORM:
            return cls.uniform(data['b'])
        envelope = PsiEnvelope(tuple(tuple(k) for k in data['envelope']))
        return cls.empirical(envelope, Metric(data.get('metric', 'l2')), data.get('sampler_id'))


def register_sampler(sampler_id: str, sampler: Sampler) -> None:
    """Register the noise sampler backing an empirical smoothing spec"""
    _SAMPLERS[sampler_id] = sampler


def unregister_sampler(sampler_id: str) -> None:
    _SAMPLERS.pop(sampler_id, None)


def psi(spec: SmoothingSpec, d: float) -> float:
    """Concave upper bound on TV(S(x), S(x')) as a function of d(x, x')

    Args:
        spec: Smoothing specification
        d: Nonnegative distance

    Returns:
        ψ(d) in [0, 1]

    Raises:
        DomainError: If d is negative or not a number
    """
    d = float(d)
    if math.isnan(d) or d < 0:
        raise DomainError(f"psi requires d >= 0, got {d}")
    if spec.kind is SmoothingKind.GAUSSIAN:
        # (d / sigma) first so that sigma rescaling is exact
        value = erf_approx((d / spec.sigma) / _TWO_SQRT2) if math.isfinite(d) else 1.0
    elif spec.kind is SmoothingKind.UNIFORM:
        value = d / spec.b
    else:
        value = spec.envelope(d)
    return min(1.0, max(0.0, value))


def noise_substream(seed: int, *key: int) -> np.random.Generator:
    """Named random substream, e.g. (repetition, item index)

    Substreams for different keys are statistically independent and do not
    depend on the order in which they are requested.
    """
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def draw_noise(spec: SmoothingSpec, shape: Tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Zero-centred additive noise of the given shape (gaussian and uniform kinds)"""
    if spec.kind is SmoothingKind.GAUSSIAN:
        return rng.normal(0.0, spec.sigma, size=shape)
    if spec.kind is SmoothingKind.UNIFORM:
        return rng.uniform(-spec.b / 2.0, spec.b / 2.0, size=shape)
    raise UnsupportedOperationError("additive noise is only defined for gaussian and uniform smoothing")


def sample_noise(spec: SmoothingSpec, item: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw x̃ ~ S(x) for one stream item

    Args:
        spec: Smoothing specification
        item: Feature vector x
        rng: Seeded substream (see noise_substream)

    Returns:
        Noisy feature vector with the same dimension

    Raises:
        DomainError: If the item is empty
        UnsupportedOperationError: For empirical specs without a registered sampler
    """
    x = np.asarray(item, dtype=np.float64)
    if x.size == 0:
        raise DomainError("item dimension must be positive")
    if spec.kind is SmoothingKind.EMPIRICAL:
        sampler = _SAMPLERS.get(spec.sampler_id) if spec.sampler_id else None
        if sampler is None:
            raise UnsupportedOperationError(
                f"no sampler registered for empirical smoothing '{spec.sampler_id}'")
        return np.asarray(sampler(x, rng), dtype=np.float64)
    return x + draw_noise(spec, x.shape, rng)


def _cross(o: Tuple[float, float], a: Tuple[float, float], b: Tuple[float, float]) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def concave_upper_envelope(samples: Iterable[Sequence[float]],
                           logger: Optional[logging.Logger] = None) -> PsiEnvelope:
    """Least concave nondecreasing piecewise-linear majorant of TV samples

    Builds the upper hull of the samples together with the origin, then
    flattens the hull past its highest point.

    Args:
        samples: (distance, tv-estimate) pairs
        logger: Optional logger for the clamping warning

    Returns:
        PsiEnvelope whose knots are hull vertices

    Raises:
        DomainError: On fewer than 2 samples, negative distances or estimates, or a
            positive estimate at distance 0
    """
    points = [(float(d), float(v)) for d, v in samples]
    if len(points) < 2:
        raise DomainError(f"concave_upper_envelope needs at least 2 samples, got {len(points)}")

    clamped = False
    best: Dict[float, float] = {0.0: 0.0}
    for d, v in points:
        if not (math.isfinite(d) and math.isfinite(v)) or d < 0 or v < 0:
            raise DomainError(f"invalid TV sample ({d}, {v})")
        if v > 1.0:
            clamped = True
            v = 1.0
        if d == 0.0 and v > 0.0:
            raise DomainError(f"TV estimate at distance 0 must be 0, got {v}")
        best[d] = max(best.get(d, 0.0), v)
    if clamped:
        (logger or logging.getLogger("StreamCert")).warning("TV estimates above 1 were clamped to 1")

    # Upper hull (monotone chain, left to right); collinear middle points are dropped
    hull = []
    for p in sorted(best.items()):
        while len(hull) >= 2 and _cross(hull[-2], hull[-1], p) >= 0:
            hull.pop()
        hull.append(p)

    # Nondecreasing: stop at the first vertex that reaches the maximum
    top = max(v for _, v in hull)
    knots = []
    for p in hull:
        knots.append(p)
        if p[1] >= top:
            break
    return PsiEnvelope(tuple(knots), clamped=clamped)
