"""Special functions used by the smoothing bounds: erf, Φ and Φ⁻¹."""
import math

from lumino.stream_cert.constants import ERF_CUTOFF
from lumino.stream_cert.error_handler import DomainError

_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)
_SQRT2 = math.sqrt(2.0)
_SQRT_2PI = math.sqrt(2.0 * math.pi)

# Rational approximation coefficients for the normal quantile (Acklam),
# refined below with Halley steps against std_normal_cdf.
_Q_A = (-3.969683028665376e1, 2.209460984245205e2, -2.759285104469687e2,
        1.383577518672690e2, -3.066479806614716e1, 2.506628277459239)
_Q_B = (-5.447609879822406e1, 1.615858368580409e2, -1.556989798598866e2,
        6.680131188771972e1, -1.328068155288572e1)
_Q_C = (-7.784894002430293e-3, -3.223964580411365e-1, -2.400758277161838,
        -2.549732539343734, 4.374664141464968, 2.938163982698783)
_Q_D = (7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996,
        3.754408661907416)
_Q_LOW = 0.02425


def _check_finite(x: float, name: str) -> float:
    x = float(x)
    if not math.isfinite(x):
        raise DomainError(f"{name} must be finite, got {x}")
    return x


def erf_approx(x: float) -> float:
    """Gauss error function.

    Uses the everywhere-convergent series
    erf(x) = 2/√π · e^{-x²} · Σ_n 2ⁿ x^{2n+1} / (1·3·…·(2n+1)),
    whose terms are all positive, so there is no cancellation. For |x| ≥ 6 the
    result is ±1 to double precision.

    Args:
        x: Finite real argument

    Returns:
        erf(x) in [-1, 1], absolute error well below 1e-7

    Raises:
        DomainError: If x is not finite
    """
    x = _check_finite(x, "erf argument")
    ax = abs(x)
    if ax >= ERF_CUTOFF:
        return math.copysign(1.0, x)

    two_x2 = 2.0 * ax * ax
    term = ax
    total = ax
    n = 0
    while term > 1e-17 * total:
        n += 1
        term *= two_x2 / (2 * n + 1)
        total += term

    value = min(1.0, _TWO_OVER_SQRT_PI * math.exp(-ax * ax) * total)
    return math.copysign(value, x)


def std_normal_cdf(x: float) -> float:
    """Standard normal CDF Φ(x) = (1 + erf(x/√2)) / 2

    Raises:
        DomainError: If x is not finite
    """
    x = _check_finite(x, "normal CDF argument")
    return 0.5 * (1.0 + erf_approx(x / _SQRT2))


def std_normal_pdf(x: float) -> float:
    """Standard normal density"""
    return math.exp(-0.5 * x * x) / _SQRT_2PI


def _quantile_initial(p: float) -> float:
    if p < _Q_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        num = ((((_Q_C[0] * q + _Q_C[1]) * q + _Q_C[2]) * q + _Q_C[3]) * q + _Q_C[4]) * q + _Q_C[5]
        den = (((_Q_D[0] * q + _Q_D[1]) * q + _Q_D[2]) * q + _Q_D[3]) * q + 1.0
        return num / den
    if p > 1.0 - _Q_LOW:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        num = ((((_Q_C[0] * q + _Q_C[1]) * q + _Q_C[2]) * q + _Q_C[3]) * q + _Q_C[4]) * q + _Q_C[5]
        den = (((_Q_D[0] * q + _Q_D[1]) * q + _Q_D[2]) * q + _Q_D[3]) * q + 1.0
        return -num / den
    q = p - 0.5
    r = q * q
    num = (((((_Q_A[0] * r + _Q_A[1]) * r + _Q_A[2]) * r + _Q_A[3]) * r + _Q_A[4]) * r + _Q_A[5]) * q
    den = ((((_Q_B[0] * r + _Q_B[1]) * r + _Q_B[2]) * r + _Q_B[3]) * r + _Q_B[4]) * r + 1.0
    return num / den


def std_normal_quantile(p: float) -> float:
    """Inverse of the standard normal CDF

    Args:
        p: Probability strictly between 0 and 1

    Returns:
        x with Φ(x) = p

    Raises:
        DomainError: If p is not in the open interval (0, 1)
    """
    p = float(p)
    if not (0.0 < p < 1.0):
        raise DomainError(f"quantile requires 0 < p < 1, got {p}")

    x = _quantile_initial(p)
    if min(p, 1.0 - p) < 1e-8:
        # Φ loses relative accuracy this far out; keep the rational guess
        return x
    # Two Halley refinements bring the rational guess to double precision
    for _ in range(2):
        e = std_normal_cdf(x) - p
        u = e * _SQRT_2PI * math.exp(0.5 * x * x)
        x = x - u / (1.0 + 0.5 * x * u)
    return x
