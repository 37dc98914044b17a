"""Certified bounds on smoothed streaming performance"""
import csv
import math
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple, Union

from lumino.stream_cert.constants import CERTIFICATE_COLUMNS, CSV_FLOAT_FORMAT, STDERR_MULTIPLIER
from lumino.stream_cert.error_handler import DomainError
from lumino.stream_cert.smoothing import SmoothingSpec, psi
from lumino.stream_cert.special import std_normal_cdf, std_normal_quantile


class ThreatModel(str, Enum):
    ONCE = 'once'
    WINDOW = 'window'


def _check_eps(eps: float) -> float:
    eps = float(eps)
    if math.isnan(eps) or eps < 0:
        raise DomainError(f"epsilon must be nonnegative, got {eps}")
    return eps


def theorem_bound(w: int, spec: SmoothingSpec, eps: float) -> float:
    """Bound on |Z̃ − Z̃_ε|: min(1, w·ψ(ε)), the same for both threat models

    Raises:
        DomainError: If w < 1 or eps < 0
    """
    if int(w) < 1:
        raise DomainError(f"window size must be >= 1, got {w}")
    eps = _check_eps(eps)
    return min(1.0, int(w) * psi(spec, eps))


@dataclass(frozen=True)
class CertificateReport:
    w: int
    threat_model: ThreatModel
    epsilon: float
    psi_at_eps: float
    bound: float
    z_tilde_hat: float
    stderr: float
    certified_lower: float
    certified_lower_adjusted: float

    def to_row(self) -> Dict[str, object]:
        row = asdict(self)
        row['threat_model'] = self.threat_model.value
        return row


def certified_lower_bound(z_tilde_hat: float, w: int, spec: SmoothingSpec, eps: float,
                          stderr: float = 0.0,
                          threat_model: ThreatModel = ThreatModel.ONCE,
                          stderr_multiplier: float = STDERR_MULTIPLIER) -> CertificateReport:
    """Lower bound on the attacked smoothed performance

    Args:
        z_tilde_hat: Estimated clean smoothed performance in [0, 1]
        w: Window size
        spec: Smoothing specification
        eps: Average perturbation budget
        stderr: Standard error of z_tilde_hat (carried through unchanged)
        threat_model: Which budget constraint eps refers to
        stderr_multiplier: Margin used for the adjusted line

    Returns:
        CertificateReport with certified_lower = max(0, z_tilde_hat - bound)
        and certified_lower_adjusted = max(0, z_tilde_hat - k·stderr - bound)
    """
    z_tilde_hat = float(z_tilde_hat)
    if not 0.0 <= z_tilde_hat <= 1.0:
        raise DomainError(f"z_tilde_hat must lie in [0, 1], got {z_tilde_hat}")
    if stderr < 0 or math.isnan(stderr):
        raise DomainError(f"stderr must be nonnegative, got {stderr}")
    bound = theorem_bound(w, spec, eps)
    return CertificateReport(
        w=int(w),
        threat_model=ThreatModel(threat_model),
        epsilon=float(eps),
        psi_at_eps=psi(spec, eps),
        bound=bound,
        z_tilde_hat=z_tilde_hat,
        stderr=float(stderr),
        certified_lower=max(0.0, z_tilde_hat - bound),
        certified_lower_adjusted=max(0.0, z_tilde_hat - stderr_multiplier * stderr - bound),
    )


def certificate_curve(z_tilde_hat: float, w: int, spec: SmoothingSpec, eps_grid: Iterable[float],
                      stderr: float = 0.0,
                      threat_model: ThreatModel = ThreatModel.ONCE) -> List[CertificateReport]:
    """One report per eps, in grid order"""
    return [certified_lower_bound(z_tilde_hat, w, spec, eps, stderr, threat_model) for eps in eps_grid]


def best_certificate_curve(curves: Mapping[str, Sequence[CertificateReport]]) -> List[Tuple[float, float, str]]:
    """Pointwise maximum of certified_lower over several smoothing settings

    Args:
        curves: Curves keyed by a label (e.g. "sigma=0.4"), all on the same eps grid

    Returns:
        (eps, best certified_lower, label achieving it) per grid point
    """
    if not curves:
        raise DomainError("best_certificate_curve needs at least one curve")
    labels = list(curves)
    grids = [tuple(r.epsilon for r in curves[label]) for label in labels]
    if any(g != grids[0] for g in grids):
        raise DomainError("all curves must share the same eps grid")
    best = []
    for k, eps in enumerate(grids[0]):
        label = max(labels, key=lambda name: curves[name][k].certified_lower)
        best.append((eps, curves[label][k].certified_lower, label))
    return best


def cohen_drop_bound(p: float, eps: float, sigma: float) -> float:
    """Static ℓ2 smoothing bound on the success-probability drop

    p − Φ(Φ⁻¹(p) − eps/sigma), clamped to [0, p].

    Raises:
        DomainError: If p is not in (0, 1), eps < 0 or sigma <= 0
    """
    eps = _check_eps(eps)
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    shifted = std_normal_quantile(p) - eps / sigma
    drop = p - std_normal_cdf(max(shifted, -40.0))
    return min(p, max(0.0, drop))


@dataclass(frozen=True)
class ComparisonRow:
    eps: float
    ours: float
    cohen: Tuple[float, ...]


def bound_comparison_table(sigma: float, p_grid: Sequence[float],
                           eps_grid: Sequence[float]) -> List[ComparisonRow]:
    """Our single-window bound next to the static bound for each p, rows ordered by eps"""
    if not p_grid or not eps_grid:
        raise DomainError("p and eps grids must be nonempty")
    spec = SmoothingSpec.gaussian(sigma)
    rows = []
    for eps in sorted(float(e) for e in eps_grid):
        rows.append(ComparisonRow(
            eps=eps,
            ours=theorem_bound(1, spec, eps),
            cohen=tuple(cohen_drop_bound(p, eps, sigma) for p in p_grid),
        ))
    return rows


def _fmt(value: object) -> str:
    if isinstance(value, float):
        return format(value, CSV_FLOAT_FORMAT)
    return str(value)


def write_certificate_csv(reports: Sequence[CertificateReport], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(CERTIFICATE_COLUMNS)
        for report in reports:
            row = report.to_row()
            writer.writerow([_fmt(row[column]) for column in CERTIFICATE_COLUMNS])


def format_certificate_report(reports: Sequence[CertificateReport], spec: SmoothingSpec) -> str:
    """Plain-text report: a header block and one aligned line per eps"""
    if not reports:
        return "Certificate report: no grid points\n"
    first = reports[0]
    setting = ', '.join(f"{k}={v}" for k, v in spec.to_dict().items() if k != 'envelope')
    lines = [
        "Certificate report",
        f"    window size: {first.w}",
        f"    threat model: {first.threat_model.value}",
        f"    smoothing: {setting}",
        f"    clean smoothed performance: {first.z_tilde_hat:.6f} (stderr {first.stderr:.6f})",
        "",
        f"{'epsilon':>10} {'psi':>10} {'bound':>10} {'certified':>10} {'adjusted':>10}",
    ]
    for r in reports:
        lines.append(f"{r.epsilon:>10.4g} {r.psi_at_eps:>10.6f} {r.bound:>10.6f} "
                     f"{r.certified_lower:>10.6f} {r.certified_lower_adjusted:>10.6f}")
    return '\n'.join(lines) + '\n'


def write_comparison_csv(rows: Sequence[ComparisonRow], p_grid: Sequence[float],
                         path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['eps', 'ours'] + [f"cohen_p{p:g}" for p in p_grid])
        for row in rows:
            writer.writerow([_fmt(row.eps), _fmt(row.ours)] + [_fmt(c) for c in row.cohen])
