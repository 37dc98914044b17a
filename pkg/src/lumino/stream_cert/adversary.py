"""Budget-constrained streaming attackers and trace auditing

Two threat models are supported. In attack-once mode every item x_i is
replaced by a single x_i' and the running average of d(x_i, x_i') may not
exceed epsilon. In per-window mode the item occupying slot k of window j
(k = j - i + 1, so k = 1 is the newest item) may be perturbed afresh in every
window, and the running average over w·j slots may not exceed epsilon.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from lumino.stream_cert.certificate import ThreatModel
from lumino.stream_cert.constants import (
    BUDGET_TOLERANCE, DEFAULT_ALPHA, DEFAULT_NOISE_DRAWS, DEFAULT_PGD_STEPS, NOISE_KEY_ATTACK,
    TRACE_CLEAN_FILE, TRACE_META_FILE, TRACE_PERTURBED_FILE
)
from lumino.stream_cert.error_handler import DomainError, ParseError, ValidationError
from lumino.stream_cert.event_handler import EventHandler
from lumino.stream_cert.model import (
    ModelParams, PerformanceFn, batch_loss_and_input_gradient, padded_windows
)
from lumino.stream_cert.smoothing import Metric, SmoothingSpec, distance, draw_noise, noise_substream
from lumino.stream_cert.stream import LabeledStream, emit_csv_stream, load_csv_stream, window_labels
from lumino.stream_cert.utils import from_json_float, load_json_file, save_json_file

# (window) -> (loss, gradient shaped like the window)
Objective = Callable[[np.ndarray], Tuple[float, np.ndarray]]


@dataclass
class BudgetLedger:
    """Running account of perturbation distances

    ``distances`` is (t,) in attack-once mode, indexed [i - 1], and (t, w) in
    per-window mode, indexed [j - 1, k - 1] for slot k of window j. Slots of
    windows that do not exist stay 0. ``step_spend[j - 1]`` is the distance
    spent while processing step j.

    A ledger may cover one chunk of a longer stream: ``offset`` steps were
    settled before it and spent ``carried``. Row indices are then relative to
    ``offset``; step numbers stay global.
    """
    mode: ThreatModel
    t: int
    w: int
    distances: Optional[np.ndarray] = None
    step_spend: Optional[np.ndarray] = None
    steps_seen: Optional[int] = None
    offset: int = 0
    carried: float = 0.0
    spent: Optional[float] = None

    def __post_init__(self):
        self.mode = ThreatModel(self.mode)
        if self.distances is None:
            shape = (self.t,) if self.mode is ThreatModel.ONCE else (self.t, self.w)
            self.distances = np.zeros(shape)
        if self.step_spend is None:
            self.step_spend = np.zeros(self.t)
        if self.steps_seen is None:
            self.steps_seen = self.offset
        if self.spent is None:
            self.spent = self.carried + float(self.step_spend[:self.steps_seen - self.offset].sum())

    @property
    def normalizer(self) -> int:
        return 1 if self.mode is ThreatModel.ONCE else self.w

    def record_item(self, i: int, d: float) -> None:
        if d < 0:
            raise DomainError(f"distances must be nonnegative, got {d}")
        row = i - self.offset - 1
        self.distances[row] = d
        self.step_spend[row] = d
        self.spent += d
        self.steps_seen = i

    def record_window(self, j: int, slot_distances: np.ndarray) -> None:
        """Record d(x_i, x_i^k) for the s items of window j, oldest first"""
        slot_distances = np.asarray(slot_distances, dtype=np.float64)
        if np.any(slot_distances < 0):
            raise DomainError("distances must be nonnegative")
        s = slot_distances.shape[0]
        row = j - self.offset - 1
        # oldest item sits in slot s
        self.distances[row, :s] = slot_distances[::-1]
        self.step_spend[row] = float(slot_distances.sum())
        self.spent += self.step_spend[row]
        self.steps_seen = j

    def total(self) -> float:
        return float(self.spent)

    def remaining(self, epsilon: float, j: int) -> float:
        """Budget available at step j: normalizer·j·ε minus everything spent so far"""
        return self.normalizer * j * epsilon - self.total()

    def average(self) -> float:
        if self.steps_seen == 0:
            return 0.0
        return self.total() / (self.normalizer * self.steps_seen)

    def prefix_averages(self) -> np.ndarray:
        """Running averages after each step this ledger covers"""
        steps = np.arange(self.offset + 1, self.steps_seen + 1)
        spend = self.carried + np.cumsum(self.step_spend[:self.steps_seen - self.offset])
        return spend / (self.normalizer * steps)


@dataclass(frozen=True)
class AttackCarry:
    """State handed from one stream chunk to the next

    ``steps`` items have been attacked so far, spending ``spent``. The tails
    hold the last min(steps, w - 1) clean items, their labels and, in
    attack-once mode, their perturbed values: the context of the first
    windows of the next chunk.
    """
    mode: ThreatModel
    w: int
    steps: int
    spent: float
    clean_tail: np.ndarray
    label_tail: np.ndarray
    perturbed_tail: Optional[np.ndarray] = None


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    alpha: int = DEFAULT_ALPHA
    pgd_steps: int = DEFAULT_PGD_STEPS
    seed: int = 0
    noise_draws: int = DEFAULT_NOISE_DRAWS
    metric: Metric = Metric.L2

    def __post_init__(self):
        object.__setattr__(self, 'metric', Metric(self.metric))
        if not self.epsilon >= 0 or not math.isfinite(self.epsilon):
            raise DomainError(f"epsilon must be nonnegative, got {self.epsilon}")
        if self.alpha < 1:
            raise DomainError(f"alpha must be >= 1, got {self.alpha}")
        if self.pgd_steps < 1:
            raise DomainError(f"pgd_steps must be >= 1, got {self.pgd_steps}")
        if self.noise_draws < 1:
            raise DomainError(f"noise_draws must be >= 1, got {self.noise_draws}")

    @property
    def pgd_step_factor(self) -> float:
        """Step size as a multiple of the radius: 2 / pgd_steps"""
        return 2.0 / self.pgd_steps

    def radius_grid(self, budget: float) -> List[float]:
        """Candidate radii (i / alpha)·budget for i = 0..alpha, ascending"""
        budget = max(0.0, budget)
        return [i * budget / self.alpha for i in range(self.alpha + 1)]


@dataclass(frozen=True)
class AttackTarget:
    """The model as deployed

    Without a smoothing spec the model is attacked directly. With one, the
    attacker works against a fixed set of noise draws per step, derived from
    ``seed``, and a candidate counts as successful only if the mean
    performance over those draws is 0.
    """
    model: ModelParams
    spec: Optional[SmoothingSpec] = None
    noise_draws: int = DEFAULT_NOISE_DRAWS
    seed: int = 0
    performance: PerformanceFn = field(default_factory=PerformanceFn.zero_one)

    @property
    def smoothed(self) -> bool:
        return self.spec is not None

    @property
    def kind(self) -> str:
        return 'smoothed' if self.smoothed else 'undefended'

    def step_noise(self, j: int, s: int) -> np.ndarray:
        """Attacker noise for the s real items of window j, shape (draws, s, D)"""
        d = self.model.num_features
        if not self.smoothed:
            return np.zeros((1, s, d))
        return np.stack([draw_noise(self.spec, (s, d), noise_substream(self.seed, NOISE_KEY_ATTACK, j, k))
                         for k in range(self.noise_draws)])

    def _inputs(self, window: np.ndarray, noise: np.ndarray) -> np.ndarray:
        w, s = self.model.window_size, window.shape[0]
        batch = np.zeros((noise.shape[0], w, self.model.num_features))
        batch[:, w - s:] = window[None] + noise
        return batch.reshape(noise.shape[0], -1)

    def score(self, window: np.ndarray, label: int, noise: np.ndarray) -> float:
        """f_j of the window (mean over the noise draws for smoothed targets)"""
        inputs = self._inputs(window, noise)
        labels = np.full(inputs.shape[0], label)
        return float(self.performance.batch(self.model, inputs, labels).mean())

    def objective(self, label: int, noise: np.ndarray) -> Objective:
        """Negative mean cross-entropy of the true label, and its window gradient"""
        w = self.model.window_size

        def evaluate(window: np.ndarray) -> Tuple[float, np.ndarray]:
            count = window.shape[0]
            inputs = self._inputs(window, noise)
            losses, grads = batch_loss_and_input_gradient(self.model, inputs, np.full(inputs.shape[0], label))
            grads = grads.reshape(inputs.shape[0], w, self.model.num_features)[:, w - count:]
            return -float(losses.mean()), -grads.mean(axis=0)

        return evaluate


def pgd_l2(objective: Objective, window: np.ndarray, slots: Union[List[int], np.ndarray],
           radius: float, steps: int = DEFAULT_PGD_STEPS,
           stop: Optional[Callable[[np.ndarray], bool]] = None,
           on_iterate: Optional[Callable[[np.ndarray], None]] = None) -> np.ndarray:
    """Projected gradient descent in an ℓ2 ball around the window

    Each step moves the mutable slots by 2·radius/steps along the normalized
    negative gradient, then projects the concatenated perturbation of those
    slots back onto the ball of the given radius.

    Args:
        objective: Loss to minimize, returning (loss, gradient)
        window: (s, D) starting window
        slots: Indices of the rows that may change
        radius: Ball radius ε'
        steps: Number of iterations
        stop: Optional early-exit test, checked on improving iterates
        on_iterate: Optional observer of every projected iterate

    Returns:
        The lowest-loss iterate seen (the start point if nothing improved)
    """
    start = np.array(window, dtype=np.float64)
    slots = np.asarray(slots, dtype=np.int64)
    if radius <= 0 or slots.size == 0:
        return start
    step_size = 2.0 * radius / steps

    delta = np.zeros_like(start)
    best_x = start
    best_loss, grad = objective(start)
    for _ in range(steps):
        g = grad[slots]
        norm = float(np.sqrt(np.sum(g * g)))
        if norm == 0.0 or not math.isfinite(norm):
            break
        delta[slots] -= step_size * g / norm
        size = float(np.sqrt(np.sum(delta[slots] * delta[slots])))
        if size > radius:
            delta[slots] *= radius / size
        x = start + delta
        if on_iterate is not None:
            on_iterate(x)
        loss, grad = objective(x)
        if loss < best_loss:
            best_loss, best_x = loss, x
            if stop is not None and stop(x):
                break
    return best_x


def _fit_to_budget(clean: np.ndarray, candidate: np.ndarray, slots: np.ndarray,
                   limit: float, metric: Metric) -> Tuple[np.ndarray, np.ndarray]:
    """Scale the candidate's perturbation so the summed slot distances stay within limit

    Returns:
        (fitted window, per-slot distances measured on the stored values)
    """
    fitted = candidate.copy()
    for _ in range(3):
        slot_d = np.array([distance(metric, clean[k], fitted[k]) for k in slots])
        spent = float(slot_d.sum())
        if spent <= limit:
            return fitted, slot_d
        scale = (limit / spent) * (1.0 - 1e-12) if spent > 0 else 0.0
        fitted[slots] = clean[slots] + scale * (fitted[slots] - clean[slots])
    fitted[slots] = clean[slots]
    return fitted, np.zeros(len(slots))


@dataclass
class AttackTrace:
    """Perturbations produced by one attack run

    Attack-once traces keep the perturbed items (t, D). Per-window traces keep
    every corrupted window, front-padded like the model input, as (t, w, D).
    A trace of one chunk covers steps ledger.offset + 1 onwards and carries
    the state the next chunk starts from.
    """
    mode: ThreatModel
    epsilon: float
    w: int
    seed: int
    metric: Metric
    clean: LabeledStream
    ledger: BudgetLedger
    outcomes_before: np.ndarray
    outcomes_after: np.ndarray
    accepted_radii: np.ndarray
    perturbed_items: Optional[np.ndarray] = None
    perturbed_windows: Optional[np.ndarray] = None
    target_kind: str = 'undefended'
    noise_draws: int = 1
    carry: Optional[AttackCarry] = None

    @property
    def accepted(self) -> np.ndarray:
        return self.accepted_radii > 0

    @property
    def first_step(self) -> int:
        return self.ledger.offset + 1

    def attacked_windows(self) -> np.ndarray:
        """The windows the model sees under attack, (t, w, D) front-padded"""
        if self.mode is ThreatModel.ONCE:
            return padded_windows(self.perturbed_items, self.w)
        return self.perturbed_windows

    def attacked_performance(self) -> float:
        return float(np.mean(self.outcomes_after))


def _new_trace(stream: LabeledStream, w: int, config: AttackConfig, mode: ThreatModel,
               target: AttackTarget, carry: Optional[AttackCarry]) -> AttackTrace:
    t = stream.length
    offset, carried = (carry.steps, carry.spent) if carry is not None else (0, 0.0)
    return AttackTrace(
        mode=mode, epsilon=config.epsilon, w=w, seed=config.seed, metric=config.metric,
        clean=stream, ledger=BudgetLedger(mode=mode, t=t, w=w, offset=offset, carried=carried),
        outcomes_before=np.zeros(t), outcomes_after=np.zeros(t), accepted_radii=np.zeros(t),
        target_kind=target.kind, noise_draws=target.noise_draws if target.smoothed else 1,
    )


def _check_target(target: AttackTarget, stream: LabeledStream, w: int) -> None:
    if target.model.window_size != w:
        raise DomainError(f"model expects window size {target.model.window_size}, attack uses {w}")
    if target.model.num_features != stream.num_features:
        raise DomainError("model and stream feature dimensions differ")


def _with_context(stream: LabeledStream, w: int, mode: ThreatModel,
                  carry: Optional[AttackCarry]) -> Tuple[LabeledStream, np.ndarray, int]:
    """The chunk preceded by the carried tail, with the window labels of the chunk

    Returns:
        (context stream, window labels of the chunk steps, tail length)
    """
    if carry is None or carry.steps == 0:
        return stream, window_labels(stream, w), 0
    if carry.mode is not mode or carry.w != w:
        raise DomainError(f"carry from a {carry.mode.value} attack with w={carry.w} "
                          f"cannot continue a {mode.value} attack with w={w}")
    n = carry.clean_tail.shape[0]
    context = LabeledStream(features=np.concatenate([carry.clean_tail, stream.features]),
                            labels=np.concatenate([carry.label_tail, stream.labels]),
                            num_classes=stream.num_classes)
    return context, window_labels(context, w)[n:], n


def _tail(values: np.ndarray, w: int) -> np.ndarray:
    return values[max(0, values.shape[0] - (w - 1)):].copy()


def _next_carry(trace: AttackTrace, context: LabeledStream,
                perturbed: Optional[np.ndarray] = None) -> AttackCarry:
    w = trace.w
    return AttackCarry(
        mode=trace.mode, w=w, steps=trace.ledger.steps_seen, spent=trace.ledger.total(),
        clean_tail=_tail(context.features, w), label_tail=_tail(context.labels, w),
        perturbed_tail=_tail(perturbed, w) if perturbed is not None else None,
    )


def _search_step(target: AttackTarget, config: AttackConfig, window: np.ndarray, slots: np.ndarray,
                 label: int, noise: np.ndarray, budget: float) -> Tuple[np.ndarray, np.ndarray, float]:
    """Grid search over ε' for one step; returns (window, slot distances, accepted ε')"""
    objective = target.objective(label, noise)

    def misclassified(x: np.ndarray) -> bool:
        return target.score(x, label, noise) == 0.0

    for radius in config.radius_grid(budget):
        if radius == 0.0:
            candidate = window
        else:
            candidate = pgd_l2(objective, window, slots, radius, config.pgd_steps, stop=misclassified)
        candidate, slot_d = _fit_to_budget(window, candidate, slots, radius, config.metric)
        if misclassified(candidate):
            return candidate, slot_d, radius
    return window, np.zeros(len(slots)), 0.0


def greedy_once_attack(stream: LabeledStream, target: AttackTarget, w: int, config: AttackConfig,
                       logger: Optional[logging.Logger] = None,
                       event_handler: Optional[EventHandler] = None,
                       carry: Optional[AttackCarry] = None) -> AttackTrace:
    """Attack-once adversary: perturb each item at most once, greedily in time

    At step j the remaining budget is j·ε minus the distance already spent.
    Earlier perturbations stay frozen; only x_j may change. Radii
    (i/α)·budget are tried in ascending order and the first candidate that
    drives f_j to 0 is kept. Steps with f_j already 0 are skipped.

    Args:
        stream: Clean stream, or the next chunk of one
        target: Model under attack (undefended or smoothed)
        w: Window size the model expects
        config: Attack configuration
        logger: Optional logger
        event_handler: Optional event sink
        carry: State left by the previous chunk; None starts at step 1

    Returns:
        AttackTrace in attack-once mode, with the carry for the next chunk
    """
    logger = logger or logging.getLogger("StreamCert")
    _check_target(target, stream, w)
    trace = _new_trace(stream, w, config, ThreatModel.ONCE, target, carry)
    context, labels, n = _with_context(stream, w, ThreatModel.ONCE, carry)
    clean = context.features
    perturbed = clean.copy()
    if n:
        perturbed[:n] = carry.perturbed_tail
    offset = trace.ledger.offset
    if event_handler:
        event_handler.emit('AttackStarted', mode=ThreatModel.ONCE.value, epsilon=config.epsilon,
                           target=target.kind, first_step=offset + 1, steps=stream.length)

    for local in range(1, stream.length + 1):
        j, p = offset + local, n + local
        start = max(1, p - w + 1)
        label = int(labels[local - 1])
        noise = target.step_noise(j, p - start + 1)
        trace.outcomes_before[local - 1] = target.score(clean[start - 1:p], label, noise)

        current = perturbed[start - 1:p].copy()
        budget = trace.ledger.remaining(config.epsilon, j)
        distance_j, radius = 0.0, 0.0
        if target.score(current, label, noise) > 0.0 and budget > 0.0:
            slot = np.array([current.shape[0] - 1])
            window, slot_d, radius = _search_step(target, config, current, slot, label, noise, budget)
            perturbed[p - 1] = window[-1]
            distance_j = float(slot_d[0])
            current = window
            if radius > 0 and event_handler:
                event_handler.emit('PerturbationAccepted', step=j, radius=radius, distance=distance_j)
        trace.ledger.record_item(j, distance_j)
        trace.accepted_radii[local - 1] = radius
        trace.outcomes_after[local - 1] = target.score(current, label, noise)

    trace.perturbed_items = perturbed[n:]
    trace.carry = _next_carry(trace, context, perturbed)
    _finish(trace, config, logger, event_handler)
    return trace


def per_window_attack(stream: LabeledStream, target: AttackTarget, w: int, config: AttackConfig,
                      logger: Optional[logging.Logger] = None,
                      event_handler: Optional[EventHandler] = None,
                      carry: Optional[AttackCarry] = None) -> AttackTrace:
    """Per-window adversary: every window is corrupted afresh from the clean items

    At step j all s = min(j, w) slots of W_j are attacked jointly with
    remaining budget w·j·ε minus the distance already spent. A window whose
    f_j cannot be driven to 0 is left clean.

    Returns:
        AttackTrace in per-window mode, with the carry for the next chunk
    """
    logger = logger or logging.getLogger("StreamCert")
    _check_target(target, stream, w)
    trace = _new_trace(stream, w, config, ThreatModel.WINDOW, target, carry)
    context, labels, n = _with_context(stream, w, ThreatModel.WINDOW, carry)
    clean = context.features
    windows = np.zeros((stream.length, w, stream.num_features))
    offset = trace.ledger.offset
    if event_handler:
        event_handler.emit('AttackStarted', mode=ThreatModel.WINDOW.value, epsilon=config.epsilon,
                           target=target.kind, first_step=offset + 1, steps=stream.length)

    for local in range(1, stream.length + 1):
        j, p = offset + local, n + local
        s = min(p, w)
        label = int(labels[local - 1])
        noise = target.step_noise(j, s)
        clean_window = clean[p - s:p]
        before = target.score(clean_window, label, noise)
        trace.outcomes_before[local - 1] = before

        budget = trace.ledger.remaining(config.epsilon, j)
        window, slot_d, radius = clean_window, np.zeros(s), 0.0
        if before > 0.0 and budget > 0.0:
            window, slot_d, radius = _search_step(target, config, clean_window, np.arange(s),
                                                  label, noise, budget)
            if radius > 0 and event_handler:
                event_handler.emit('PerturbationAccepted', step=j, radius=radius, distance=float(slot_d.sum()))
        windows[local - 1, w - s:] = window
        trace.ledger.record_window(j, slot_d)
        trace.accepted_radii[local - 1] = radius
        trace.outcomes_after[local - 1] = target.score(window, label, noise)

    trace.perturbed_windows = windows
    trace.carry = _next_carry(trace, context)
    _finish(trace, config, logger, event_handler)
    return trace


def _finish(trace: AttackTrace, config: AttackConfig, logger: logging.Logger,
            event_handler: Optional[EventHandler]) -> None:
    average = trace.ledger.average()
    logger.debug(f"{trace.mode.value} attack at eps={config.epsilon}, steps {trace.first_step}-"
                 f"{trace.ledger.steps_seen}: {int(trace.accepted.sum())} accepted, ledger average {average:.6g}")
    if event_handler:
        event_handler.emit('AttackCompleted', mode=trace.mode.value, epsilon=config.epsilon,
                           target=trace.target_kind, accepted=int(trace.accepted.sum()),
                           performance_before=float(np.mean(trace.outcomes_before)),
                           performance_after=trace.attacked_performance(), ledger_average=average)


def attack_chunks(mode: ThreatModel, chunks: Iterable[LabeledStream], target: AttackTarget, w: int,
                  config: AttackConfig, logger: Optional[logging.Logger] = None,
                  event_handler: Optional[EventHandler] = None) -> Iterator[AttackTrace]:
    """Attack a stream delivered in chunks, carrying the ledger across chunk boundaries

    Only the current chunk and a tail of w - 1 items are held, so a caller that
    consumes the traces as they arrive runs in bounded memory. Merging all
    chunk traces gives the trace of attacking the concatenated stream at once.
    """
    attack = greedy_once_attack if ThreatModel(mode) is ThreatModel.ONCE else per_window_attack
    carry = None
    for chunk in chunks:
        trace = attack(chunk, target, w, config, logger=logger, event_handler=event_handler, carry=carry)
        carry = trace.carry
        yield trace


def split_stream(stream: LabeledStream, chunk_size: int) -> Iterator[LabeledStream]:
    if chunk_size < 1:
        raise DomainError(f"chunk_size must be >= 1, got {chunk_size}")
    for start in range(0, stream.length, chunk_size):
        stop = min(stream.length, start + chunk_size)
        yield LabeledStream(features=stream.features[start:stop], labels=stream.labels[start:stop],
                            num_classes=stream.num_classes)


def merge_traces(traces: Sequence[AttackTrace]) -> AttackTrace:
    """Join consecutive chunk traces into one trace starting at step 1

    Raises:
        ValidationError: If the chunks are not contiguous or disagree on the attack
    """
    if not traces:
        raise ValidationError("no chunk traces to merge")
    first, last = traces[0], traces[-1]
    steps = 0
    for trace in traces:
        if trace.ledger.offset != steps:
            raise ValidationError(f"chunk starting at step {trace.first_step} does not follow step {steps}")
        if (trace.mode, trace.w, trace.epsilon, trace.seed) != (first.mode, first.w, first.epsilon, first.seed):
            raise ValidationError("chunk traces come from different attacks")
        steps = trace.ledger.steps_seen
    if len(traces) == 1:
        return first

    def joined(name: str) -> np.ndarray:
        return np.concatenate([getattr(trace, name) for trace in traces])

    clean = LabeledStream(features=np.concatenate([trace.clean.features for trace in traces]),
                          labels=np.concatenate([trace.clean.labels for trace in traces]),
                          num_classes=first.clean.num_classes)
    ledger = BudgetLedger(mode=first.mode, t=clean.length, w=first.w,
                          distances=np.concatenate([trace.ledger.distances for trace in traces]),
                          step_spend=np.concatenate([trace.ledger.step_spend for trace in traces]),
                          steps_seen=steps, spent=last.ledger.total())
    return AttackTrace(
        mode=first.mode, epsilon=first.epsilon, w=first.w, seed=first.seed, metric=first.metric,
        clean=clean, ledger=ledger, outcomes_before=joined('outcomes_before'),
        outcomes_after=joined('outcomes_after'), accepted_radii=joined('accepted_radii'),
        perturbed_items=joined('perturbed_items') if first.mode is ThreatModel.ONCE else None,
        perturbed_windows=joined('perturbed_windows') if first.mode is ThreatModel.WINDOW else None,
        target_kind=first.target_kind, noise_draws=first.noise_draws, carry=last.carry,
    )


def run_attack(mode: ThreatModel, stream: LabeledStream, target: AttackTarget, w: int,
               config: AttackConfig, logger: Optional[logging.Logger] = None,
               event_handler: Optional[EventHandler] = None,
               chunk_size: Optional[int] = None) -> AttackTrace:
    """Attack the whole stream, chunk_size steps at a time when given"""
    chunks = split_stream(stream, chunk_size) if chunk_size else [stream]
    return merge_traces(list(attack_chunks(mode, chunks, target, w, config, logger=logger,
                                           event_handler=event_handler)))


def _recomputed_step_spend(trace: AttackTrace) -> np.ndarray:
    clean = trace.clean.features
    t = trace.clean.length
    if trace.mode is ThreatModel.ONCE:
        items = trace.perturbed_items
        if items is None or items.shape != clean.shape:
            raise ValidationError("attack-once trace must carry a (t, D) array of perturbed items")
        if not np.all(np.isfinite(items)):
            raise ValidationError("perturbed items must be finite")
        return np.array([distance(trace.metric, clean[i], items[i]) for i in range(t)])

    windows = trace.perturbed_windows
    expected = (t, trace.w, trace.clean.num_features)
    if windows is None or windows.shape != expected:
        raise ValidationError(f"per-window trace must carry windows of shape {expected}")
    if not np.all(np.isfinite(windows)):
        raise ValidationError("perturbed windows must be finite")
    spend = np.zeros(t)
    for j in range(1, t + 1):
        s = min(j, trace.w)
        if np.any(windows[j - 1, :trace.w - s] != 0.0):
            raise ValidationError(f"window {j} has values in padding slots")
        spend[j - 1] = sum(distance(trace.metric, clean[j - s + k], windows[j - 1, trace.w - s + k])
                           for k in range(s))
    return spend


def validate_trace_budget(trace: AttackTrace) -> dict:
    """Recompute the budget from the raw clean and perturbed data, ignoring the ledger

    Returns:
        dict with compliant (final average within ε + 1e-9), average,
        worst_prefix_average and prefix_compliant

    Raises:
        ValidationError: If the trace is malformed
    """
    if trace.w < 1 or trace.clean is None:
        raise ValidationError("trace must carry its clean stream and a window size >= 1")
    if trace.ledger.offset != 0:
        raise ValidationError(f"trace starts at step {trace.first_step}; merge the chunk traces before auditing")
    spend = _recomputed_step_spend(trace)
    normalizer = 1 if trace.mode is ThreatModel.ONCE else trace.w
    steps = np.arange(1, spend.shape[0] + 1)
    prefix = np.cumsum(spend) / (normalizer * steps)
    average = float(prefix[-1])
    worst = float(prefix.max())
    limit = trace.epsilon + BUDGET_TOLERANCE
    return {
        'compliant': average <= limit,
        'prefix_compliant': worst <= limit,
        'average': average,
        'worst_prefix_average': worst,
    }


def replay_trace(trace: AttackTrace, target: AttackTarget) -> np.ndarray:
    """Recompute f_j on the recorded attacked windows with the target's fixed noise

    Returns:
        (t,) outcomes; equal to trace.outcomes_after for the target that produced the trace
    """
    windows = trace.attacked_windows()
    labels = window_labels(trace.clean, trace.w)
    outcomes = np.zeros(trace.clean.length)
    for j in range(1, trace.clean.length + 1):
        s = min(j, trace.w)
        outcomes[j - 1] = target.score(windows[j - 1, trace.w - s:], int(labels[j - 1]), target.step_noise(j, s))
    return outcomes


def emit_trace(trace: AttackTrace, directory: Union[str, Path]) -> Path:
    """Write clean.csv, perturbed.csv and the trace.json sidecar

    Per-window traces write one perturbed row per (window, slot); the sidecar
    ``row_map`` lists [window j, item i, slot k] for each row.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    emit_csv_stream(trace.clean, directory / TRACE_CLEAN_FILE)

    row_map = []
    if trace.mode is ThreatModel.ONCE:
        perturbed = trace.clean.with_features(trace.perturbed_items)
    else:
        rows, labels = [], []
        for j in range(1, trace.clean.length + 1):
            s = min(j, trace.w)
            for offset in range(s):
                i = j - s + 1 + offset
                rows.append(trace.perturbed_windows[j - 1, trace.w - s + offset])
                labels.append(int(trace.clean.labels[i - 1]))
                row_map.append([j, i, j - i + 1])
        perturbed = LabeledStream(features=np.array(rows), labels=np.array(labels),
                                  num_classes=trace.clean.num_classes)
    emit_csv_stream(perturbed, directory / TRACE_PERTURBED_FILE)

    save_json_file(directory / TRACE_META_FILE, {
        'mode': trace.mode.value,
        'epsilon': trace.epsilon,
        'w': trace.w,
        'seed': trace.seed,
        'metric': trace.metric.value,
        'num_classes': trace.clean.num_classes,
        'target': trace.target_kind,
        'noise_draws': trace.noise_draws,
        'distances': trace.ledger.distances,
        'step_spend': trace.ledger.step_spend,
        'outcomes_before': trace.outcomes_before,
        'outcomes_after': trace.outcomes_after,
        'accepted_radii': trace.accepted_radii,
        'row_map': row_map,
    })
    return directory


def load_trace(directory: Union[str, Path]) -> AttackTrace:
    """Read a trace directory written by emit_trace

    Raises:
        ValidationError: If the sidecar is missing or inconsistent
    """
    directory = Path(directory)
    meta_path = directory / TRACE_META_FILE
    if not meta_path.exists():
        raise ValidationError(f"{meta_path}: trace sidecar not found")
    meta = load_json_file(meta_path, default=None)
    if not meta:
        raise ValidationError(f"{meta_path}: unreadable trace sidecar")
    try:
        mode = ThreatModel(meta['mode'])
        w = int(meta['w'])
        num_classes = int(meta['num_classes'])
        clean = load_csv_stream(directory / TRACE_CLEAN_FILE, num_classes=num_classes)
        perturbed = load_csv_stream(directory / TRACE_PERTURBED_FILE, num_features=clean.num_features,
                                    num_classes=num_classes)
        t = clean.length

        def floats(key: str) -> np.ndarray:
            return np.array([from_json_float(v) for v in np.ravel(np.array(meta[key], dtype=object))],
                            dtype=np.float64)

        ledger = BudgetLedger(mode=mode, t=t, w=w,
                              distances=floats('distances').reshape((t,) if mode is ThreatModel.ONCE else (t, w)),
                              step_spend=floats('step_spend'), steps_seen=t)
        trace = AttackTrace(
            mode=mode, epsilon=from_json_float(meta['epsilon']), w=w, seed=int(meta['seed']),
            metric=Metric(meta['metric']), clean=clean, ledger=ledger,
            outcomes_before=floats('outcomes_before'), outcomes_after=floats('outcomes_after'),
            accepted_radii=floats('accepted_radii'), target_kind=meta.get('target', 'undefended'),
            noise_draws=int(meta.get('noise_draws', 1)),
        )
        if mode is ThreatModel.ONCE:
            trace.perturbed_items = perturbed.features.copy()
        else:
            windows = np.zeros((t, w, clean.num_features))
            row_map = meta['row_map']
            if len(row_map) != perturbed.length:
                raise ValidationError("row_map does not match the perturbed rows")
            for row, (j, i, _) in enumerate(row_map):
                s = min(j, w)
                windows[j - 1, w - s + (i - (j - s + 1))] = perturbed.features[row]
            trace.perturbed_windows = windows
    except (KeyError, TypeError, ValueError, ParseError) as e:
        raise ValidationError(f"{directory}: malformed trace ({e})")
    return trace
