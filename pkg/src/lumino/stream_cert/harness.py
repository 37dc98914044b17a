import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from lumino.stream_cert.adversary import (
    AttackConfig, AttackTarget, AttackTrace, emit_trace, run_attack, validate_trace_budget
)
from lumino.stream_cert.certificate import (
    CertificateReport, ThreatModel, best_certificate_curve, certificate_curve, certified_lower_bound
)
from lumino.stream_cert.constants import (
    CSV_FLOAT_FORMAT, DEFAULT_ALPHA, DEFAULT_BATCH_SIZE, DEFAULT_CHUNK_SIZE, DEFAULT_EPOCHS,
    DEFAULT_HIDDEN_WIDTH, DEFAULT_LEARNING_RATE, DEFAULT_MC_REPS, DEFAULT_MOMENTUM,
    DEFAULT_NOISE_DRAWS, DEFAULT_OUTPUT_DIR, DEFAULT_PGD_STEPS, DEFAULT_WEIGHT_DECAY,
    NOISE_KEY_ITEM, NOISE_KEY_WINDOW, PLOT_CURVES, RESULT_COLUMNS, STDERR_MULTIPLIER
)
from lumino.stream_cert.error_handler import (
    AcceptanceError, DomainError, ParseError, StreamCertError, ValidationError
)
from lumino.stream_cert.event_handler import EventHandler
from lumino.stream_cert.model import (
    Architecture, ModelParams, PerformanceFn, TrainConfig, load_model, padded_windows,
    real_item_mask, stream_performance, train_sgd
)
from lumino.stream_cert.smoothing import (
    SmoothingKind, SmoothingSpec, draw_noise, noise_substream, sample_noise
)
from lumino.stream_cert.stream import (
    GeneratorConfig, LabeledStream, generate_synthetic_stream, load_csv_stream, standardize_stream,
    window_labels
)
from lumino.stream_cert.utils import config_hash, package_version, save_json_file, to_jsonable


class NoisePolicy(str, Enum):
    PER_ITEM_ONCE = 'per_item_once'
    FRESH_PER_WINDOW = 'fresh_per_window'


ATTACK_MODES = ('once', 'window', 'both')


@dataclass
class ExperimentConfig:
    """All parameters of a certify / attack / sweep run

    Field names are also the keys accepted in JSON config files.
    """
    tag: str = 'run'
    seed: int = 0
    output_dir: str = DEFAULT_OUTPUT_DIR
    # Stream source: a CSV file, or the synthetic generator below
    stream_csv: Optional[str] = None
    train_csv: Optional[str] = None
    num_classes: int = 3
    num_features: int = 4
    length: int = 300
    train_length: int = 600
    min_segment: int = 10
    max_segment: int = 30
    separation: float = 3.0
    noise: float = 1.0
    standardize: bool = True
    # Window and smoothing
    w: int = 2
    smoothing: str = 'gaussian'
    sigma: float = 1.0
    b: float = 2.0
    eps_grid: Tuple[float, ...] = (0.0, 0.25, 0.5, 1.0)
    # Attack
    attack_mode: str = 'both'
    alpha: int = DEFAULT_ALPHA
    pgd_steps: int = DEFAULT_PGD_STEPS
    noise_draws: int = DEFAULT_NOISE_DRAWS
    # Monte Carlo evaluation
    mc_reps: int = DEFAULT_MC_REPS
    noise_policy: str = NoisePolicy.PER_ITEM_ONCE.value
    chunk_size: int = DEFAULT_CHUNK_SIZE
    # Models
    architecture: str = Architecture.MLP1.value
    hidden_width: int = DEFAULT_HIDDEN_WIDTH
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    learning_rate: float = DEFAULT_LEARNING_RATE
    momentum: float = DEFAULT_MOMENTUM
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    augment: bool = True
    model_path: Optional[str] = None
    smoothed_model_path: Optional[str] = None
    # Sweep
    sweep_windows: Tuple[int, ...] = (1, 2, 4)
    sweep_sigmas: Tuple[float, ...] = (0.25, 0.5, 1.0)
    workers: int = 1

    def __post_init__(self):
        self.eps_grid = tuple(float(e) for e in self.eps_grid)
        self.sweep_windows = tuple(int(w) for w in self.sweep_windows)
        self.sweep_sigmas = tuple(float(s) for s in self.sweep_sigmas)
        if not self.eps_grid:
            raise DomainError("eps_grid must not be empty")
        if any(e < 0 or math.isnan(e) for e in self.eps_grid):
            raise DomainError("eps_grid values must be nonnegative")
        if list(self.eps_grid) != sorted(self.eps_grid):
            raise DomainError("eps_grid must be ascending")
        if self.mc_reps < 1:
            raise DomainError(f"mc_reps must be >= 1, got {self.mc_reps}")
        if self.w < 1:
            raise DomainError(f"w must be >= 1, got {self.w}")
        if self.attack_mode not in ATTACK_MODES:
            raise DomainError(f"attack_mode must be one of {ATTACK_MODES}, got {self.attack_mode!r}")
        if self.workers < 1 or self.chunk_size < 1:
            raise DomainError("workers and chunk_size must be >= 1")
        NoisePolicy(self.noise_policy)
        Architecture(self.architecture)
        SmoothingKind(self.smoothing)
        # Fails fast on invalid sigma / b
        _ = self.spec

    @property
    def spec(self) -> SmoothingSpec:
        if SmoothingKind(self.smoothing) is SmoothingKind.UNIFORM:
            return SmoothingSpec.uniform(self.b)
        if SmoothingKind(self.smoothing) is SmoothingKind.GAUSSIAN:
            return SmoothingSpec.gaussian(self.sigma)
        raise DomainError("experiments support gaussian and uniform smoothing")

    @property
    def modes(self) -> List[ThreatModel]:
        if self.attack_mode == 'both':
            return [ThreatModel.ONCE, ThreatModel.WINDOW]
        return [ThreatModel(self.attack_mode)]

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(num_classes=self.num_classes, num_features=self.num_features,
                               length=self.train_length + self.length, min_segment=self.min_segment,
                               max_segment=self.max_segment, separation=self.separation,
                               noise=self.noise, seed=self.seed)

    def train_config(self, noise_sigma: Optional[float] = None) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
                           momentum=self.momentum, weight_decay=self.weight_decay, noise_sigma=noise_sigma,
                           seed=self.seed, hidden_width=self.hidden_width)

    def augmentation_sigma(self) -> float:
        """Gaussian training noise matching the deployed smoothing's per-coordinate spread"""
        if SmoothingKind(self.smoothing) is SmoothingKind.UNIFORM:
            return self.b / math.sqrt(12.0)
        return self.sigma

    def to_dict(self) -> Dict[str, Any]:
        return to_jsonable(asdict(self))

    def fingerprint(self) -> str:
        """Hash over every field that can change results"""
        data = self.to_dict()
        data.pop('output_dir', None)
        data.pop('workers', None)
        return config_hash(data)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ExperimentConfig':
        """Build a config from a plain mapping

        Raises:
            ParseError: On unknown keys
            DomainError: On invalid values
        """
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ParseError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class SmoothedEstimate:
    z_tilde: float
    stderr: float
    per_step: np.ndarray
    per_rep: np.ndarray


@dataclass
class ResultRow:
    eps: float
    clean_z: float
    clean_z_tilde: float
    clean_z_tilde_stderr: float
    certified_lower: float
    attacked_z: float = math.nan
    attacked_z_tilde: float = math.nan
    attacked_z_tilde_stderr: float = math.nan
    certified_lower_adjusted: float = math.nan
    ledger_average_undefended: float = math.nan
    ledger_average_smoothed: float = math.nan
    worst_prefix_average: float = math.nan

    def csv_values(self) -> List[float]:
        return [getattr(self, column) for column in RESULT_COLUMNS]

    def combined_stderr(self) -> float:
        attacked = 0.0 if math.isnan(self.attacked_z_tilde_stderr) else self.attacked_z_tilde_stderr
        return math.sqrt(self.clean_z_tilde_stderr ** 2 + attacked ** 2)


@dataclass
class RunResult:
    """Rows for one experiment plus provenance"""
    tag: str
    config: Dict[str, Any]
    config_hash: str
    seed: int
    mode: Optional[str] = None
    rows: List[ResultRow] = field(default_factory=list)
    complete: bool = True
    traces: Dict[str, AttackTrace] = field(default_factory=dict)


def _item_noise(spec: SmoothingSpec, items: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if spec.kind is SmoothingKind.EMPIRICAL:
        return np.stack([sample_noise(spec, item, rng) - item for item in items])
    return draw_noise(spec, items.shape, rng)


def evaluate_smoothed_stream(stream: LabeledStream, model: ModelParams, w: int, spec: SmoothingSpec,
                             mc_reps: int = DEFAULT_MC_REPS,
                             policy: NoisePolicy = NoisePolicy.PER_ITEM_ONCE,
                             seed: int = 0,
                             windows: Optional[np.ndarray] = None,
                             performance: Optional[PerformanceFn] = None,
                             chunk_size: int = DEFAULT_CHUNK_SIZE) -> SmoothedEstimate:
    """Monte Carlo estimate of Z̃ and of every f̃_i

    PER_ITEM_ONCE draws one noise vector per stream item and repetition and
    reuses it in every window containing the item. FRESH_PER_WINDOW draws
    independent noise for every window. Windows are processed in chunks of
    ``chunk_size`` steps; noise comes from per-(repetition, item) or
    per-(repetition, window) substreams, so chunking does not change results.

    Args:
        stream: Clean stream (labels, and the windows when none are given)
        model: Classifier expecting window size w
        w: Window size
        spec: Smoothing specification
        mc_reps: Number of repetitions
        policy: Noise reuse policy
        seed: Root seed
        windows: Optional (t, w, D) front-padded windows, e.g. an attacked trace
        performance: Per-step performance function (0/1 by default)
        chunk_size: Steps per chunk

    Returns:
        SmoothedEstimate with stderr = sample std of per-repetition Z̃ / √R
    """
    if model.window_size != w:
        raise DomainError(f"model expects window size {model.window_size}, evaluation uses {w}")
    if mc_reps < 1:
        raise DomainError(f"mc_reps must be >= 1, got {mc_reps}")
    policy = NoisePolicy(policy)
    performance = performance or PerformanceFn.zero_one()
    t, d = stream.length, stream.num_features
    if windows is None:
        windows = padded_windows(stream.features, w)
    labels = window_labels(stream, w)
    mask = real_item_mask(t, w)

    per_step_total = np.zeros(t)
    per_rep = np.zeros(mc_reps)
    for rep in range(mc_reps):
        rep_total = 0.0
        for start in range(0, t, chunk_size):
            stop = min(t, start + chunk_size)
            chunk = windows[start:stop]
            noise = np.zeros_like(chunk)
            if policy is NoisePolicy.PER_ITEM_ONCE:
                first = max(0, start - w + 1)
                items = np.zeros((stop - first, d))
                for i in range(first, stop):
                    rng = noise_substream(seed, NOISE_KEY_ITEM, rep, i + 1)
                    items[i - first] = _item_noise(spec, stream.features[i:i + 1], rng)[0]
                # Window j (0-based) holds items j-w+1..j in slots 0..w-1
                for j in range(start, stop):
                    for slot in range(w):
                        i = j - w + 1 + slot
                        if i >= 0:
                            noise[j - start, slot] = items[i - first]
            else:
                for j in range(start, stop):
                    s = min(j + 1, w)
                    rng = noise_substream(seed, NOISE_KEY_WINDOW, rep, j + 1)
                    noise[j - start, w - s:] = _item_noise(spec, chunk[j - start, w - s:], rng)
            noisy = chunk + noise * mask[start:stop, :, None]
            values = performance.batch(model, noisy.reshape(stop - start, -1), labels[start:stop])
            per_step_total[start:stop] += values
            rep_total += float(values.sum())
        per_rep[rep] = rep_total / t

    z_tilde = float(per_rep.mean())
    stderr = float(per_rep.std(ddof=1) / math.sqrt(mc_reps)) if mc_reps > 1 else 0.0
    return SmoothedEstimate(z_tilde=z_tilde, stderr=stderr, per_step=per_step_total / mc_reps, per_rep=per_rep)


def _format_value(value: float) -> str:
    return format(float(value), CSV_FLOAT_FORMAT)


def emit_results(result: RunResult, output_dir: Union[str, Path],
                 formats: Sequence[str] = ('csv', 'plot')) -> List[Path]:
    """Write results_<tag>.csv, <tag>_<curve>.dat plot data and manifest_<tag>.json

    Returns:
        Paths of the written files
    """
    output_dir = Path(output_dir).expanduser()
    output_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if 'csv' in formats:
        path = output_dir / f"results_{result.tag}.csv"
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(RESULT_COLUMNS)
            for row in result.rows:
                writer.writerow([_format_value(v) for v in row.csv_values()])
        written.append(path)
    if 'plot' in formats:
        for curve in PLOT_CURVES:
            values = [(row.eps, getattr(row, curve)) for row in result.rows]
            if not values or all(math.isnan(v) for _, v in values):
                continue
            path = output_dir / f"{result.tag}_{curve}.dat"
            with open(path, 'w') as f:
                for eps, value in values:
                    f.write(f"{_format_value(eps)} {_format_value(value)}\n")
            written.append(path)

    manifest = output_dir / f"manifest_{result.tag}.json"
    save_json_file(manifest, {
        'tag': result.tag,
        'config': result.config,
        'config_hash': result.config_hash,
        'seed': result.seed,
        'attack_mode': result.mode,
        'ledger_averages': [{'eps': row.eps,
                             'undefended': row.ledger_average_undefended,
                             'smoothed': row.ledger_average_smoothed,
                             'worst_prefix': row.worst_prefix_average} for row in result.rows],
        'certified_lower_adjusted': [row.certified_lower_adjusted for row in result.rows],
        'version': package_version(),
        'complete': result.complete,
    })
    written.append(manifest)
    return written


def load_results(path: Union[str, Path]) -> List[ResultRow]:
    """Parse a results CSV back into rows (the eight schema columns)

    Raises:
        ParseError: On a wrong header or non-numeric cells
    """
    path = str(path)
    rows = []
    with open(path, newline='') as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != RESULT_COLUMNS:
            raise ParseError(f"expected columns {', '.join(RESULT_COLUMNS)}", row=1, path=path)
        for row_number, cells in enumerate(reader, start=2):
            try:
                values = [float(cell) for cell in cells]
            except ValueError as e:
                raise ParseError(f"non-numeric cell ({e})", row=row_number, path=path)
            if len(values) != len(RESULT_COLUMNS):
                raise ParseError(f"expected {len(RESULT_COLUMNS)} cells", row=row_number, path=path)
            rows.append(ResultRow(**dict(zip(RESULT_COLUMNS, values))))
    return rows


@dataclass
class SweepResult:
    eps_grid: Tuple[float, ...]
    curves: Dict[int, Dict[str, List[CertificateReport]]]
    best: Dict[int, List[Tuple[float, float, str]]]


class ExperimentRunner:
    """Loads data and models once, then runs certify / attack / sweep experiments"""

    def __init__(self, config: ExperimentConfig, logger: Optional[logging.Logger] = None,
                 event_handler: Optional[EventHandler] = None):
        self.config = config
        self.logger = logger or logging.getLogger("StreamCert")
        self.event_handler = event_handler or EventHandler(self.logger)
        self.output_dir = Path(os.path.expanduser(config.output_dir))

        self._streams: Optional[Tuple[LabeledStream, LabeledStream]] = None
        self._models: Optional[Tuple[ModelParams, ModelParams]] = None
        self._clean: Optional[Tuple[float, SmoothedEstimate]] = None

    def load_streams(self) -> Tuple[LabeledStream, LabeledStream]:
        """(training stream, evaluation stream), standardized with training moments"""
        if self._streams is not None:
            return self._streams
        config = self.config
        if config.stream_csv:
            evaluation = load_csv_stream(config.stream_csv)
            if config.train_csv:
                train = load_csv_stream(config.train_csv, num_features=evaluation.num_features,
                                        num_classes=evaluation.num_classes)
            else:
                train = evaluation
        else:
            full = generate_synthetic_stream(config.generator_config())
            split = config.train_length
            train = LabeledStream(full.features[:split], full.labels[:split], full.num_classes)
            evaluation = LabeledStream(full.features[split:], full.labels[split:], full.num_classes)
        if config.standardize:
            train, record = standardize_stream(train, logger=self.logger)
            evaluation = record.apply(evaluation)
        self.logger.info(f"Loaded streams: train t={train.length}, evaluation t={evaluation.length}, "
                         f"D={evaluation.num_features}, classes={evaluation.num_classes}")
        self._streams = (train, evaluation)
        return self._streams

    def prepare_models(self, w: Optional[int] = None,
                       noise_sigma: Optional[float] = None) -> Tuple[ModelParams, ModelParams]:
        """(undefended model, smoothed model) for the configured window size

        Loaded from disk when paths are configured, otherwise trained. The
        smoothed model is noise-augmented unless ``augment`` is off.
        """
        config = self.config
        w = w or config.w
        if w == config.w and noise_sigma is None and self._models is not None:
            return self._models
        train, _ = self.load_streams()
        architecture = Architecture(config.architecture)
        if config.model_path and w == config.w:
            undefended = load_model(config.model_path)
        else:
            undefended = train_sgd(train, w, architecture, config.train_config(), logger=self.logger,
                                   event_handler=self.event_handler)
        if config.smoothed_model_path and w == config.w:
            smoothed = load_model(config.smoothed_model_path)
        elif config.augment:
            sigma = noise_sigma if noise_sigma is not None else config.augmentation_sigma()
            smoothed = train_sgd(train, w, architecture, config.train_config(noise_sigma=sigma),
                                 logger=self.logger, event_handler=self.event_handler)
        else:
            smoothed = undefended
        for model in (undefended, smoothed):
            if model.window_size != w:
                raise DomainError(f"model expects window size {model.window_size}, experiment uses {w}")
        if w == config.w and noise_sigma is None:
            self._models = (undefended, smoothed)
        return undefended, smoothed

    def _evaluate(self, model: ModelParams, spec: SmoothingSpec, w: int,
                  windows: Optional[np.ndarray] = None) -> SmoothedEstimate:
        _, stream = self.load_streams()
        estimate = evaluate_smoothed_stream(stream, model, w, spec, self.config.mc_reps,
                                            NoisePolicy(self.config.noise_policy), self.config.seed,
                                            windows=windows, chunk_size=self.config.chunk_size)
        self.event_handler.emit('SmoothedEvaluationCompleted', z_tilde=estimate.z_tilde,
                                stderr=estimate.stderr, reps=self.config.mc_reps,
                                attacked=windows is not None)
        return estimate

    def clean_estimates(self) -> Tuple[float, SmoothedEstimate]:
        """Clean Z of the undefended model and clean Z̃ of the smoothed model"""
        if self._clean is None:
            _, stream = self.load_streams()
            undefended, smoothed = self.prepare_models()
            clean_z, _ = stream_performance(undefended, stream)
            self._clean = (clean_z, self._evaluate(smoothed, self.config.spec, self.config.w))
        return self._clean

    def _new_result(self, tag: str, mode: Optional[str]) -> RunResult:
        return RunResult(tag=tag, config=self.config.to_dict(), config_hash=self.config.fingerprint(),
                         seed=self.config.seed, mode=mode)

    def _certified_row(self, eps: float, mode: ThreatModel) -> ResultRow:
        clean_z, estimate = self.clean_estimates()
        report = certified_lower_bound(estimate.z_tilde, self.config.w, self.config.spec, eps,
                                       stderr=estimate.stderr, threat_model=mode)
        self.event_handler.emit('CertificateComputed', eps=eps, bound=report.bound,
                                certified_lower=report.certified_lower)
        return ResultRow(eps=eps, clean_z=clean_z, clean_z_tilde=estimate.z_tilde,
                         clean_z_tilde_stderr=estimate.stderr, certified_lower=report.certified_lower,
                         certified_lower_adjusted=report.certified_lower_adjusted)

    def _flush_partial(self, result: RunResult) -> None:
        result.complete = False
        try:
            emit_results(result, self.output_dir)
            self.logger.error(f"Partial results for '{result.tag}' written to {self.output_dir}")
        except OSError as e:
            self.logger.error(f"Could not write partial results: {e}")

    def run_certify_experiment(self) -> RunResult:
        """Certified lower bound at every eps of the grid"""
        result = self._new_result(f"{self.config.tag}_certify", None)
        try:
            for eps in self.config.eps_grid:
                result.rows.append(self._certified_row(eps, ThreatModel.ONCE))
        except (StreamCertError, OSError, ValueError):
            self._flush_partial(result)
            raise
        return result

    def _attack_row(self, eps: float, mode: ThreatModel) -> Tuple[ResultRow, Dict[str, AttackTrace]]:
        config = self.config
        _, stream = self.load_streams()
        undefended, smoothed = self.prepare_models()
        row = self._certified_row(eps, mode)
        attack_config = AttackConfig(epsilon=eps, alpha=config.alpha, pgd_steps=config.pgd_steps,
                                     seed=config.seed, noise_draws=config.noise_draws,
                                     metric=config.spec.metric)
        targets = {
            'undefended': AttackTarget(undefended),
            'smoothed': AttackTarget(smoothed, config.spec, config.noise_draws, config.seed),
        }
        traces = {}
        worst = 0.0
        for name, target in targets.items():
            trace = run_attack(mode, stream, target, config.w, attack_config, logger=self.logger,
                               event_handler=self.event_handler, chunk_size=config.chunk_size)
            audit = validate_trace_budget(trace)
            self.event_handler.emit('TraceAudited', mode=mode.value, eps=eps, target=name, **audit)
            if not (audit['compliant'] and audit['prefix_compliant']):
                raise ValidationError(f"{name} {mode.value} trace at eps={eps} exceeds its budget "
                                      f"(average {audit['average']:.6g}, worst prefix "
                                      f"{audit['worst_prefix_average']:.6g})")
            worst = max(worst, audit['worst_prefix_average'])
            traces[name] = trace
            setattr(row, f"ledger_average_{name}", audit['average'])

        row.attacked_z = traces['undefended'].attacked_performance()
        attacked = self._evaluate(smoothed, config.spec, config.w, windows=traces['smoothed'].attacked_windows())
        row.attacked_z_tilde = attacked.z_tilde
        row.attacked_z_tilde_stderr = attacked.stderr
        row.worst_prefix_average = worst
        return row, traces

    def run_attack_experiment(self, mode: Optional[ThreatModel] = None, emit_traces: bool = False) -> RunResult:
        """Attack the undefended and smoothed models at every eps for one threat model

        Every trace is audited with validate_trace_budget; a non-compliant
        trace aborts the run. Grid points may run on ``workers`` threads.
        """
        mode = ThreatModel(mode) if mode is not None else self.config.modes[0]
        result = self._new_result(f"{self.config.tag}_{mode.value}", mode.value)
        # Shared state is built before any worker starts
        self.clean_estimates()
        try:
            if self.config.workers > 1:
                with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                    futures = [pool.submit(self._attack_row, eps, mode) for eps in self.config.eps_grid]
                    for future in futures:
                        row, traces = future.result()
                        self._collect(result, row, traces, emit_traces)
            else:
                for eps in self.config.eps_grid:
                    row, traces = self._attack_row(eps, mode)
                    self._collect(result, row, traces, emit_traces)
        except (StreamCertError, OSError, ValueError):
            self._flush_partial(result)
            raise
        return result

    def _collect(self, result: RunResult, row: ResultRow, traces: Dict[str, AttackTrace],
                 emit_traces: bool) -> None:
        result.rows.append(row)
        for name, trace in traces.items():
            key = f"{name}_eps{row.eps:g}"
            result.traces[key] = trace
            if emit_traces:
                emit_trace(trace, self.output_dir / f"traces_{result.tag}" / key)

    def run_attack_experiments(self, emit_traces: bool = False) -> Dict[ThreatModel, RunResult]:
        return {mode: self.run_attack_experiment(mode, emit_traces) for mode in self.config.modes}

    def run_sweep_experiment(self) -> SweepResult:
        """Certificates for every (window size, sigma) pair and the best curve per window size"""
        config = self.config
        _, stream = self.load_streams()
        curves: Dict[int, Dict[str, List[CertificateReport]]] = {}
        best = {}
        for w in config.sweep_windows:
            curves[w] = {}
            for sigma in config.sweep_sigmas:
                spec = SmoothingSpec.gaussian(sigma)
                _, smoothed = self.prepare_models(w=w, noise_sigma=sigma)
                estimate = self._evaluate(smoothed, spec, w)
                curves[w][f"sigma={sigma:g}"] = certificate_curve(estimate.z_tilde, w, spec, config.eps_grid,
                                                                  stderr=estimate.stderr)
            best[w] = best_certificate_curve(curves[w])
        return SweepResult(eps_grid=config.eps_grid, curves=curves, best=best)


def emit_sweep(result: SweepResult, output_dir: Union[str, Path], tag: str) -> Path:
    """One CSV row per (w, setting, eps); the best curve uses setting 'best'"""
    path = Path(output_dir).expanduser() / f"sweep_{tag}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['w', 'setting', 'eps', 'z_tilde', 'stderr', 'certified_lower'])
        for w, curves in result.curves.items():
            for label, reports in curves.items():
                for report in reports:
                    writer.writerow([w, label, _format_value(report.epsilon), _format_value(report.z_tilde_hat),
                                     _format_value(report.stderr), _format_value(report.certified_lower)])
            for eps, value, label in result.best[w]:
                writer.writerow([w, f"best ({label})", _format_value(eps), '', '', _format_value(value)])
    return path


def check_run_invariants(certify: RunResult, attacks: Dict[ThreatModel, RunResult],
                         multiplier: float = STDERR_MULTIPLIER) -> List[str]:
    """Violations of the certificate and attack-strength checks (empty when all hold)

    - attacked smoothed performance >= certified line - k·stderr at every eps
    - certified line <= clean smoothed performance
    - per-window attacked performance <= attack-once attacked performance + k·stderr
    """
    violations = []
    for row in certify.rows:
        if row.certified_lower > row.clean_z_tilde:
            violations.append(f"eps={row.eps:g}: certified {row.certified_lower:.6g} above clean "
                              f"{row.clean_z_tilde:.6g}")
    for mode, result in attacks.items():
        for row in result.rows:
            margin = multiplier * row.combined_stderr()
            if row.attacked_z_tilde < row.certified_lower - margin:
                violations.append(f"{mode.value} eps={row.eps:g}: attacked {row.attacked_z_tilde:.6g} "
                                  f"below certified {row.certified_lower:.6g} - {margin:.3g}")
    if ThreatModel.ONCE in attacks and ThreatModel.WINDOW in attacks:
        for once, window in zip(attacks[ThreatModel.ONCE].rows, attacks[ThreatModel.WINDOW].rows):
            margin = multiplier * math.sqrt(once.attacked_z_tilde_stderr ** 2 + window.attacked_z_tilde_stderr ** 2)
            if window.attacked_z_tilde > once.attacked_z_tilde + margin:
                violations.append(f"eps={once.eps:g}: per-window attack ({window.attacked_z_tilde:.6g}) weaker "
                                  f"than attack-once ({once.attacked_z_tilde:.6g})")
    return violations


def run_simulation(config: ExperimentConfig, logger: Optional[logging.Logger] = None,
                   event_handler: Optional[EventHandler] = None,
                   emit_traces: bool = False) -> Tuple[RunResult, Dict[ThreatModel, RunResult]]:
    """Train, certify, attack and check; results are written before checking

    Raises:
        AcceptanceError: If any run invariant is violated
    """
    runner = ExperimentRunner(config, logger=logger, event_handler=event_handler)
    certify = runner.run_certify_experiment()
    emit_results(certify, runner.output_dir)
    attacks = runner.run_attack_experiments(emit_traces=emit_traces)
    for result in attacks.values():
        emit_results(result, runner.output_dir)
    violations = check_run_invariants(certify, attacks)
    if violations:
        raise AcceptanceError('; '.join(violations))
    return certify, attacks
