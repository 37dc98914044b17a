"""Brute-force and numerical checks for the smoothing bounds

Total variation comes from quadrature or exact sums, smoothed performance
from exhaustive enumeration over discrete noise, and gradients from central
differences.
"""
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate
from lumino.stream_cert.certificate import ThreatModel, cohen_drop_bound, theorem_bound
from lumino.stream_cert.constants import (
    GRADIENT_TOLERANCE, LEMMA_TOLERANCE, MAX_ENUMERATION, ORACLE_MC_DRAWS, STDERR_MULTIPLIER
)
from lumino.stream_cert.error_handler import DomainError, SizeError, UnsupportedOperationError
from lumino.stream_cert.event_handler import EventHandler
from lumino.stream_cert.model import Architecture, ModelParams, cross_entropy, init_params, input_gradient
from lumino.stream_cert.smoothing import (
    PsiEnvelope, SmoothingKind, SmoothingSpec, concave_upper_envelope, psi
)
from lumino.stream_cert.special import erf_approx, std_normal_cdf, std_normal_quantile

# Window tuples (oldest item first) for every step of a per-window adversary
WindowSequence = Sequence[Sequence[int]]


@dataclass(frozen=True)
class DiscreteInstance:
    """Finite toy problem: items are integers 0..m-1 (D = 1)

    ``kernel[x][x̃]`` is P(x̃ | x). ``tables[i - 1]`` holds f_i over window
    tuples and has one axis of length m per window slot (min(i, w) axes,
    oldest slot first).
    """
    m: int
    w: int
    t: int
    kernel: np.ndarray
    distance: np.ndarray
    tables: Tuple[np.ndarray, ...]

    def __post_init__(self):
        kernel = np.array(self.kernel, dtype=np.float64)
        dist = np.array(self.distance, dtype=np.float64)
        tables = tuple(np.array(table, dtype=np.float64) for table in self.tables)
        if self.m < 1 or self.w < 1 or self.t < 1:
            raise DomainError("m, w and t must be positive")
        if kernel.shape != (self.m, self.m) or np.any(kernel < 0):
            raise DomainError(f"kernel must be a nonnegative {self.m}x{self.m} matrix")
        if np.any(np.abs(kernel.sum(axis=1) - 1.0) > 1e-12):
            raise DomainError("kernel rows must sum to 1")
        if dist.shape != (self.m, self.m) or np.any(dist < 0) or np.any(np.diag(dist) != 0):
            raise DomainError("distance must be nonnegative with a zero diagonal")
        if not np.array_equal(dist, dist.T):
            raise DomainError("distance must be symmetric")
        if len(tables) != self.t:
            raise DomainError(f"expected {self.t} performance tables, got {len(tables)}")
        for i, table in enumerate(tables, start=1):
            if table.shape != (self.m,) * min(i, self.w):
                raise DomainError(f"table {i} has shape {table.shape}, expected {(self.m,) * min(i, self.w)}")
            if np.any(table < 0) or np.any(table > 1):
                raise DomainError(f"table {i} has values outside [0, 1]")
        object.__setattr__(self, 'kernel', kernel)
        object.__setattr__(self, 'distance', dist)
        object.__setattr__(self, 'tables', tables)

    def windows_of(self, stream: Sequence[int]) -> List[Tuple[int, ...]]:
        """The window tuples W_1..W_t of an attack-once (or clean) stream"""
        stream = [int(x) for x in stream]
        if len(stream) != self.t or any(not 0 <= x < self.m for x in stream):
            raise DomainError(f"stream must have {self.t} items in [0, {self.m})")
        return [tuple(stream[max(0, j - self.w):j]) for j in range(1, self.t + 1)]


def numeric_tv(source: Union[SmoothingSpec, np.ndarray], x: Any, x_prime: Any) -> float:
    """Total variation between the smoothing distributions at x and x'

    Args:
        source: A gaussian or uniform SmoothingSpec, or a row-stochastic kernel
        x: Item (feature vector, or row index for a kernel)
        x_prime: Second item

    Returns:
        TV in [0, 1]

    Raises:
        UnsupportedOperationError: For empirical smoothing specs
    """
    if not isinstance(source, SmoothingSpec):
        kernel = np.asarray(source, dtype=np.float64)
        return float(0.5 * np.sum(np.abs(kernel[int(x)] - kernel[int(x_prime)])))

    delta = np.atleast_1d(np.asarray(x, dtype=np.float64) - np.asarray(x_prime, dtype=np.float64))
    if source.kind is SmoothingKind.GAUSSIAN:
        # Isotropy reduces the problem to two unit normals z apart on a line
        z = float(np.linalg.norm(delta)) / source.sigma
        if z == 0.0:
            return 0.0

        def gap(u: float) -> float:
            return abs(math.exp(-0.5 * u * u) - math.exp(-0.5 * (u - z) ** 2)) / math.sqrt(2.0 * math.pi)

        value, _ = integrate.quad(gap, -12.0, z + 12.0, points=[z / 2.0], limit=200, epsabs=1e-12)
        return min(1.0, 0.5 * value)
    if source.kind is SmoothingKind.UNIFORM:
        overlap = np.prod(np.maximum(0.0, 1.0 - np.abs(delta) / source.b))
        return float(1.0 - overlap)
    raise UnsupportedOperationError("total variation is not available for empirical smoothing")


def _check_enumeration(instance: DiscreteInstance) -> None:
    if instance.m ** instance.w > MAX_ENUMERATION:
        raise SizeError(f"m^w = {instance.m ** instance.w} exceeds {MAX_ENUMERATION}")


def smoothed_window_value(instance: DiscreteInstance, step: int, window: Sequence[int]) -> float:
    """Exact f̃ for one window: sum over all noise outcomes weighted by the kernel"""
    value = instance.tables[step - 1]
    for item in window:
        value = np.tensordot(instance.kernel[int(item)], value, axes=([0], [0]))
    return float(value)


def exact_smoothed_windows_perf(instance: DiscreteInstance,
                                windows: WindowSequence) -> Tuple[float, np.ndarray]:
    """Exact Z̃ and per-step f̃_i for explicit window contents (per-window threat model)

    Raises:
        SizeError: If m^w exceeds the enumeration limit
    """
    _check_enumeration(instance)
    if len(windows) != instance.t:
        raise DomainError(f"expected {instance.t} windows, got {len(windows)}")
    values = np.array([smoothed_window_value(instance, j, window)
                       for j, window in enumerate(windows, start=1)])
    return float(values.mean()), values


def exact_smoothed_stream_perf(instance: DiscreteInstance, stream: Sequence[int]) -> Tuple[float, np.ndarray]:
    """Exact Z̃ and per-step f̃_i for a stream of items

    Raises:
        SizeError: If m^w exceeds the enumeration limit
    """
    return exact_smoothed_windows_perf(instance, instance.windows_of(stream))


def monte_carlo_smoothed_perf(instance: DiscreteInstance, stream: Sequence[int], draws: int,
                              seed: int = 0) -> Tuple[float, float]:
    """Monte Carlo Z̃ with one noise draw per item per repetition

    Returns:
        (mean, standard error) over the repetitions
    """
    rng = np.random.default_rng(seed)
    stream = [int(x) for x in stream]
    cumulative = np.cumsum(instance.kernel, axis=1)
    uniforms = rng.random((draws, instance.t))
    noisy = np.empty((draws, instance.t), dtype=np.int64)
    for i, x in enumerate(stream):
        noisy[:, i] = np.minimum(np.searchsorted(cumulative[x], uniforms[:, i], side='right'), instance.m - 1)
    totals = np.zeros(draws)
    for j in range(1, instance.t + 1):
        start = max(0, j - instance.w)
        totals += instance.tables[j - 1][tuple(noisy[:, k] for k in range(start, j))]
    z = totals / instance.t
    stderr = float(z.std(ddof=1) / math.sqrt(draws)) if draws > 1 else 0.0
    return float(z.mean()), stderr


def tightest_discrete_psi(instance: DiscreteInstance) -> PsiEnvelope:
    """Concave envelope of the exact pairwise TVs against their distances

    Raises:
        DomainError: If two items at distance 0 have different kernel rows
    """
    samples = [(0.0, 0.0)]
    for x, y in itertools.combinations(range(instance.m), 2):
        samples.append((instance.distance[x, y], numeric_tv(instance.kernel, x, y)))
    return concave_upper_envelope(samples)


def _as_envelope(psi_fn: Optional[Union[PsiEnvelope, Sequence[Sequence[float]]]],
                 instance: DiscreteInstance) -> PsiEnvelope:
    if psi_fn is None:
        return tightest_discrete_psi(instance)
    if isinstance(psi_fn, PsiEnvelope):
        return psi_fn
    # PsiEnvelope rejects non-concave knots with DomainError
    return PsiEnvelope(tuple(tuple(knot) for knot in psi_fn))


def verify_lemma_bounds(instance: DiscreteInstance, clean: Sequence[int],
                        adversarial: Union[Sequence[int], WindowSequence],
                        mode: ThreatModel = ThreatModel.ONCE,
                        psi_fn: Optional[Union[PsiEnvelope, Sequence[Sequence[float]]]] = None) -> Dict[str, Any]:
    """Check the per-step and whole-stream bounds by exact enumeration

    Per step j: |f̃_j(W_j) − f̃_j(W_j')| <= Σ_{i in W_j} ψ(d(x_i, x_i^{j+1-i})).
    Whole stream: |Z̃ − Z̃'| <= w·ψ(ε) with ε the realized average distance
    (over t items in attack-once mode, over w·t slots in per-window mode).

    Args:
        instance: Discrete instance
        clean: Clean stream of item ids
        adversarial: Perturbed stream (attack-once) or one window tuple per
            step, oldest item first (per-window)
        mode: Threat model the adversarial data follows
        psi_fn: ψ envelope or its knots; defaults to the tightest valid ψ

    Returns:
        {'steps': [{step, lhs, rhs, holds}], 'overall': {lhs, rhs, epsilon, holds}, 'holds': bool}

    Raises:
        DomainError: If the supplied ψ is not concave or the data is malformed
    """
    envelope = _as_envelope(psi_fn, instance)
    mode = ThreatModel(mode)
    clean_windows = instance.windows_of(clean)
    if mode is ThreatModel.ONCE:
        adv_windows = instance.windows_of(adversarial)
    else:
        adv_windows = [tuple(int(x) for x in window) for window in adversarial]
        for j, (a, b) in enumerate(zip(clean_windows, adv_windows), start=1):
            if len(a) != len(b) or any(not 0 <= x < instance.m for x in b):
                raise DomainError(f"adversarial window {j} must hold {len(a)} items in [0, {instance.m})")

    z_clean, f_clean = exact_smoothed_windows_perf(instance, clean_windows)
    z_adv, f_adv = exact_smoothed_windows_perf(instance, adv_windows)

    steps = []
    for j in range(1, instance.t + 1):
        rhs = sum(envelope(instance.distance[a, b]) for a, b in zip(clean_windows[j - 1], adv_windows[j - 1]))
        lhs = abs(f_clean[j - 1] - f_adv[j - 1])
        steps.append({'step': j, 'lhs': lhs, 'rhs': rhs, 'holds': lhs <= rhs + LEMMA_TOLERANCE})

    if mode is ThreatModel.ONCE:
        total = sum(instance.distance[int(a), int(b)] for a, b in zip(clean, adversarial))
        epsilon = total / instance.t
    else:
        total = sum(instance.distance[a, b]
                    for cw, aw in zip(clean_windows, adv_windows) for a, b in zip(cw, aw))
        epsilon = total / (instance.w * instance.t)
    lhs = abs(z_clean - z_adv)
    rhs = instance.w * envelope(epsilon)
    overall = {'lhs': lhs, 'rhs': rhs, 'epsilon': epsilon, 'holds': lhs <= rhs + LEMMA_TOLERANCE}
    return {
        'steps': steps,
        'overall': overall,
        'holds': overall['holds'] and all(step['holds'] for step in steps),
    }


def random_discrete_instance(rng: np.random.Generator, max_m: int = 5, max_t: int = 6,
                             max_w: int = 3) -> DiscreteInstance:
    """Random instance with a noisy kernel, line-embedded distances and random tables"""
    m = int(rng.integers(2, max_m + 1))
    t = int(rng.integers(1, max_t + 1))
    w = int(rng.integers(1, max_w + 1))
    mix = rng.uniform(0.0, 1.0)
    kernel = mix * np.eye(m) + (1.0 - mix) * rng.dirichlet(np.ones(m), size=m)
    kernel /= kernel.sum(axis=1, keepdims=True)
    positions = rng.uniform(0.0, 3.0, size=m)
    dist = np.abs(positions[:, None] - positions[None, :])
    binary = rng.random() < 0.5
    tables = []
    for i in range(1, t + 1):
        shape = (m,) * min(i, w)
        tables.append((rng.random(shape) < 0.5).astype(np.float64) if binary else rng.random(shape))
    return DiscreteInstance(m=m, w=w, t=t, kernel=kernel, distance=dist, tables=tuple(tables))


def random_adversarial(rng: np.random.Generator, instance: DiscreteInstance, clean: Sequence[int],
                       mode: ThreatModel) -> Union[List[int], List[Tuple[int, ...]]]:
    """Random perturbed data for a clean stream; about half the items are moved"""
    def perturb(x: int) -> int:
        return int(rng.integers(0, instance.m)) if rng.random() < 0.5 else int(x)

    if ThreatModel(mode) is ThreatModel.ONCE:
        return [perturb(x) for x in clean]
    return [tuple(perturb(x) for x in window) for window in instance.windows_of(clean)]


def tv_maximizing_table(kernel: np.ndarray, x: int, x_prime: int) -> np.ndarray:
    """Single-item f that is 1 exactly where K[x] puts more mass than K[x']

    Its smoothed values at x and x' differ by TV(K[x], K[x']).
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    return (kernel[int(x)] > kernel[int(x_prime)]).astype(np.float64)


def finite_diff_check(model: ModelParams, window: np.ndarray, tolerance: float = GRADIENT_TOLERANCE,
                      target: int = 0, step: float = 1e-5) -> Tuple[float, bool]:
    """Compare input_gradient with central differences of the cross-entropy

    Returns:
        (max |analytic − numeric| / max(|analytic|∞, |numeric|∞, 1e-8), error <= tolerance)
    """
    if not tolerance > 0:
        raise DomainError(f"tolerance must be positive, got {tolerance}")
    window = np.array(window, dtype=np.float64)
    analytic = input_gradient(model, window, target)
    numeric = np.zeros_like(window)
    for index in np.ndindex(*window.shape):
        plus, minus = window.copy(), window.copy()
        plus[index] += step
        minus[index] -= step
        numeric[index] = (cross_entropy(model, plus, target) - cross_entropy(model, minus, target)) / (2 * step)
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-8)
    error = float(np.max(np.abs(analytic - numeric)) / scale)
    return error, error <= tolerance


@dataclass
class CheckResult:
    name: str
    checked: int = 0
    failures: int = 0
    worst: float = 0.0
    counterexamples: Optional[List[Dict[str, Any]]] = None

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def fail(self, example: Dict[str, Any], keep: int = 5) -> None:
        self.failures += 1
        if self.counterexamples is None:
            self.counterexamples = []
        if len(self.counterexamples) < keep:
            self.counterexamples.append(example)


def _erf_by_quadrature(x: float) -> float:
    value, _ = integrate.quad(lambda u: math.exp(-u * u), 0.0, x, epsabs=1e-13)
    return 2.0 / math.sqrt(math.pi) * value


def check_special_functions(rng: np.random.Generator) -> CheckResult:
    result = CheckResult('special_functions')
    for x in rng.uniform(-4.0, 4.0, size=50):
        erf_error = abs(erf_approx(x) - _erf_by_quadrature(x))
        cdf_error = abs(std_normal_cdf(x) - 0.5 * (1.0 + _erf_by_quadrature(x / math.sqrt(2.0))))
        result.checked += 1
        result.worst = max(result.worst, erf_error, cdf_error)
        if erf_error > 1e-6 or cdf_error > 1e-6:
            result.fail({'x': x, 'erf_error': erf_error, 'cdf_error': cdf_error})
    for p in rng.uniform(1e-4, 1.0 - 1e-4, size=50):
        error = abs(std_normal_cdf(std_normal_quantile(p)) - p)
        result.checked += 1
        if error > 1e-6:
            result.fail({'p': p, 'round_trip_error': error})
    return result


def check_psi_against_tv(sigmas: Sequence[float] = (0.5, 1.0, 2.0), points: int = 25) -> CheckResult:
    result = CheckResult('psi_vs_tv')
    for sigma in sigmas:
        spec = SmoothingSpec.gaussian(sigma)
        for d in np.linspace(0.0, 6.0 * sigma, points):
            tv = numeric_tv(spec, np.array([0.0]), np.array([d]))
            error = abs(psi(spec, d) - tv)
            result.checked += 1
            result.worst = max(result.worst, error)
            if error > 1e-3:
                result.fail({'sigma': sigma, 'd': d, 'psi': psi(spec, d), 'tv': tv})
    return result


def check_uniform_psi(rng: np.random.Generator, trials: int = 50) -> CheckResult:
    result = CheckResult('uniform_psi_upper_bound')
    for _ in range(trials):
        b = float(rng.uniform(0.5, 3.0))
        spec = SmoothingSpec.uniform(b)
        delta = rng.normal(0.0, b / 2.0, size=int(rng.integers(1, 5)))
        tv = numeric_tv(spec, delta, np.zeros_like(delta))
        bound = psi(spec, float(np.sum(np.abs(delta))))
        result.checked += 1
        if tv > bound + 1e-12:
            result.fail({'b': b, 'delta': delta.tolist(), 'tv': tv, 'psi': bound})
    return result


def check_lemma_bounds(rng: np.random.Generator, instances: int = 200) -> CheckResult:
    result = CheckResult('lemma_and_theorem_bounds')
    for n in range(instances):
        instance = random_discrete_instance(rng)
        clean = [int(x) for x in rng.integers(0, instance.m, size=instance.t)]
        for mode in (ThreatModel.ONCE, ThreatModel.WINDOW):
            adversarial = random_adversarial(rng, instance, clean, mode)
            report = verify_lemma_bounds(instance, clean, adversarial, mode)
            result.checked += 1
            result.worst = max(result.worst, report['overall']['lhs'] - report['overall']['rhs'])
            if not report['holds']:
                result.fail({'instance': n, 'mode': mode.value, 'clean': clean,
                             'adversarial': [list(a) if isinstance(a, tuple) else a for a in adversarial],
                             'kernel': instance.kernel, 'distance': instance.distance,
                             'report': report})
    return result


def check_exact_vs_monte_carlo(rng: np.random.Generator, instances: int = 5,
                               draws: int = ORACLE_MC_DRAWS) -> CheckResult:
    result = CheckResult('exact_vs_monte_carlo')
    for n in range(instances):
        instance = random_discrete_instance(rng)
        clean = [int(x) for x in rng.integers(0, instance.m, size=instance.t)]
        exact, _ = exact_smoothed_stream_perf(instance, clean)
        estimate, stderr = monte_carlo_smoothed_perf(instance, clean, draws, seed=int(rng.integers(2 ** 31)))
        result.checked += 1
        if abs(exact - estimate) > STDERR_MULTIPLIER * stderr + 1e-12:
            result.fail({'instance': n, 'exact': exact, 'estimate': estimate, 'stderr': stderr})
    return result


def check_gradients(rng: np.random.Generator, pairs: int = 100) -> CheckResult:
    result = CheckResult('input_gradients')
    for n in range(pairs):
        architecture = Architecture.LINEAR if n % 2 == 0 else Architecture.MLP1
        w = int(rng.integers(1, 4))
        d = int(rng.integers(1, 4))
        classes = int(rng.integers(2, 4))
        model = init_params(architecture, w, d, classes, hidden_width=8, seed=int(rng.integers(2 ** 31)))
        window = rng.normal(size=(int(rng.integers(1, w + 1)), d))
        error, passed = finite_diff_check(model, window, target=int(rng.integers(classes)))
        result.checked += 1
        result.worst = max(result.worst, error)
        if not passed:
            result.fail({'architecture': architecture.value, 'w': w, 'error': error})
    return result


def check_cohen_ordering(p_grid: Sequence[float] = (0.6, 0.75, 0.9, 0.99), points: int = 25) -> CheckResult:
    result = CheckResult('cohen_below_ours')
    spec = SmoothingSpec.gaussian(1.0)
    for p in p_grid:
        for eps in np.linspace(0.0, 3.0, points):
            ours = theorem_bound(1, spec, eps)
            cohen = cohen_drop_bound(p, eps, 1.0)
            result.checked += 1
            if cohen > ours + 1e-9:
                result.fail({'p': p, 'eps': eps, 'cohen': cohen, 'ours': ours})
    return result


def run_oracle_suite(seed: int = 0, instances: int = 200,
                     logger: Optional[logging.Logger] = None,
                     event_handler: Optional[EventHandler] = None) -> List[CheckResult]:
    """Run every oracle check with a seeded generator

    Returns:
        One CheckResult per check, in a fixed order
    """
    logger = logger or logging.getLogger("StreamCert")
    rng = np.random.default_rng(seed)
    results = [
        check_special_functions(rng),
        check_psi_against_tv(),
        check_uniform_psi(rng),
        check_lemma_bounds(rng, instances),
        check_exact_vs_monte_carlo(rng),
        check_gradients(rng),
        check_cohen_ordering(),
    ]
    for result in results:
        logger.info(f"Oracle check {result.name}: {result.checked} checked, {result.failures} failed")
        if event_handler:
            event_handler.emit('OracleCheckCompleted', check=result.name, checked=result.checked,
                               failures=result.failures, worst=result.worst)
    return results
