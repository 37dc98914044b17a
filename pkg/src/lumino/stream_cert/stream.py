"""Labeled streams, sliding windows, CSV I/O and synthetic stream generation"""
import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from lumino.stream_cert.constants import CSV_FLOAT_FORMAT, FEATURE_PREFIX, LABEL_COLUMN
from lumino.stream_cert.error_handler import DomainError, ParseError


@dataclass(frozen=True)
class StreamItem:
    features: np.ndarray
    index: int


@dataclass(frozen=True)
class LabeledStream:
    """Finite stream x_1..x_t with one ground-truth label per time step

    Features are stored as a read-only (t, D) float64 array. Time steps are
    1-based everywhere in the public API.
    """
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)
        if features.ndim == 1:
            features = features.reshape(-1, 1)
        if features.ndim != 2 or features.shape[0] < 1 or features.shape[1] < 1:
            raise DomainError(f"stream features must be a non-empty (t, D) array, got shape {features.shape}")
        if labels.shape != (features.shape[0],):
            raise DomainError(f"expected {features.shape[0]} labels, got {labels.shape}")
        if not np.all(np.isfinite(features)):
            raise DomainError("stream features must be finite")
        num_classes = int(self.num_classes)
        if num_classes < 1:
            raise DomainError(f"num_classes must be positive, got {num_classes}")
        if labels.min() < 0 or labels.max() >= num_classes:
            raise DomainError(f"labels must lie in [0, {num_classes})")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, 'features', features)
        object.__setattr__(self, 'labels', labels)
        object.__setattr__(self, 'num_classes', num_classes)

    @property
    def length(self) -> int:
        return int(self.features.shape[0])

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])

    def item(self, i: int) -> StreamItem:
        self._check_step(i)
        return StreamItem(features=self.features[i - 1], index=i)

    @property
    def items(self) -> List[StreamItem]:
        return [StreamItem(features=self.features[i], index=i + 1) for i in range(self.length)]

    def with_features(self, features: np.ndarray) -> 'LabeledStream':
        """Same labels, replaced features (e.g. a perturbed copy)"""
        return LabeledStream(features=features, labels=self.labels, num_classes=self.num_classes)

    def _check_step(self, i: int) -> None:
        if not 1 <= i <= self.length:
            raise DomainError(f"time step {i} outside [1, {self.length}]")

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledStream):
            return NotImplemented
        return (self.num_classes == other.num_classes
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.features, other.features))

    __hash__ = None


@dataclass(frozen=True)
class WindowView:
    """The last s = min(i, w) items ending at step ``end`` (1-based, inclusive)"""
    features: np.ndarray
    w: int
    start: int
    end: int

    @property
    def size(self) -> int:
        return int(self.features.shape[0])


def window_at(stream: LabeledStream, i: int, w: int) -> WindowView:
    """Window W_i: (x_1..x_i) for i <= w, otherwise (x_{i-w+1}..x_i)

    Raises:
        DomainError: If i is outside [1, t] or w < 1
    """
    if w < 1:
        raise DomainError(f"window size must be >= 1, got {w}")
    stream._check_step(i)
    start = max(1, i - w + 1)
    return WindowView(features=stream.features[start - 1:i], w=w, start=start, end=i)


def window_label(stream: LabeledStream, i: int, w: int) -> int:
    """Majority label of W_i; ties go to the most recently seen tied label"""
    view = window_at(stream, i, w)
    labels = stream.labels[view.start - 1:view.end]
    counts = np.bincount(labels, minlength=stream.num_classes)
    top = counts.max()
    for label in labels[::-1]:
        if counts[label] == top:
            return int(label)
    return int(labels[-1])


def window_labels(stream: LabeledStream, w: int) -> np.ndarray:
    return np.array([window_label(stream, i, w) for i in range(1, stream.length + 1)], dtype=np.int64)


def feature_columns(num_features: int) -> List[str]:
    return [f"{FEATURE_PREFIX}{k}" for k in range(num_features)]


def load_csv_stream(path: Union[str, Path], num_features: Optional[int] = None,
                    label_column: str = LABEL_COLUMN,
                    num_classes: Optional[int] = None) -> LabeledStream:
    """Load a stream from CSV with header f0..f{D-1},label

    Args:
        path: CSV file
        num_features: Expected D; inferred from the header when None
        label_column: Name of the label column
        num_classes: Overrides max(label) + 1

    Returns:
        LabeledStream with rows in file order

    Raises:
        ParseError: Missing column, non-numeric cell or ragged row
        DomainError: Empty file
    """
    path = str(path)
    with open(path, newline='', encoding='utf-8') as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise DomainError(f"{path}: stream file is empty")
        header = [h.strip() for h in header]
        if num_features is None:
            num_features = sum(1 for h in header if h.startswith(FEATURE_PREFIX) and h[len(FEATURE_PREFIX):].isdigit())
        if num_features < 1:
            raise ParseError(f"missing column '{FEATURE_PREFIX}0'", row=1, path=path)
        wanted = feature_columns(num_features) + [label_column]
        positions = []
        for name in wanted:
            if name not in header:
                raise ParseError(f"missing column '{name}'", row=1, path=path)
            positions.append(header.index(name))

        rows: List[List[float]] = []
        labels: List[int] = []
        for row_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} cells, got {len(row)}", row=row_number, path=path)
            label_cell = row[positions[-1]].strip()
            try:
                values = [float(row[p]) for p in positions[:-1]]
                label_value = float(label_cell)
            except ValueError as e:
                raise ParseError(f"non-numeric cell ({e})", row=row_number, path=path)
            if not label_value.is_integer():
                raise ParseError(f"label '{label_cell}' is not an integer", row=row_number, path=path)
            if not all(math.isfinite(v) for v in values):
                raise ParseError("non-finite feature value", row=row_number, path=path)
            rows.append(values)
            labels.append(int(label_value))

    if not rows:
        raise DomainError(f"{path}: stream file has no data rows")
    if min(labels) < 0:
        raise ParseError("labels must be nonnegative", path=path)
    if num_classes is None:
        num_classes = max(labels) + 1
    return LabeledStream(features=np.array(rows, dtype=np.float64).reshape(len(rows), num_features),
                         labels=np.array(labels, dtype=np.int64), num_classes=num_classes)


def emit_csv_stream(stream: LabeledStream, path: Union[str, Path],
                    label_column: str = LABEL_COLUMN) -> None:
    """Write a stream as CSV; floats keep 17 significant digits"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(feature_columns(stream.num_features) + [label_column])
        for x, y in zip(stream.features, stream.labels):
            writer.writerow([format(float(v), CSV_FLOAT_FORMAT) for v in x] + [int(y)])


@dataclass(frozen=True)
class GeneratorConfig:
    """Synthetic stream parameters

    Labels form piecewise-constant segments whose lengths are drawn uniformly
    from [min_segment, max_segment]. Items are class means plus isotropic
    Gaussian noise; class means are random unit directions scaled by
    ``separation``.
    """
    num_classes: int = 3
    num_features: int = 4
    length: int = 300
    min_segment: int = 10
    max_segment: int = 30
    separation: float = 3.0
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise DomainError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.num_features < 1:
            raise DomainError(f"num_features must be >= 1, got {self.num_features}")
        if self.length < 1:
            raise DomainError(f"length must be >= 1, got {self.length}")
        if not 1 <= self.min_segment <= self.max_segment:
            raise DomainError(f"need 1 <= min_segment <= max_segment, got {self.min_segment}, {self.max_segment}")
        if self.separation < 0 or self.noise < 0:
            raise DomainError("separation and noise must be nonnegative")


def generate_synthetic_stream(config: GeneratorConfig) -> LabeledStream:
    """Piecewise-constant label segments with Gaussian items around class means"""
    rng = np.random.default_rng(config.seed)
    directions = rng.normal(size=(config.num_classes, config.num_features))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    means = config.separation * directions / np.where(norms > 0, norms, 1.0)

    labels = np.empty(config.length, dtype=np.int64)
    position = 0
    previous = -1
    while position < config.length:
        segment = int(rng.integers(config.min_segment, config.max_segment + 1))
        if previous < 0:
            label = int(rng.integers(0, config.num_classes))
        else:
            # Consecutive segments always change class
            label = int(rng.integers(0, config.num_classes - 1))
            if label >= previous:
                label += 1
        labels[position:position + segment] = label
        position += segment
        previous = label

    features = means[labels] + config.noise * rng.normal(size=(config.length, config.num_features))
    return LabeledStream(features=features, labels=labels, num_classes=config.num_classes)


@dataclass(frozen=True)
class StandardizationRecord:
    mean: np.ndarray
    std: np.ndarray
    zero_variance: np.ndarray

    def apply(self, stream: LabeledStream) -> LabeledStream:
        """Apply the same affine map to another stream (e.g. a held-out split)"""
        scale = np.where(self.zero_variance, 1.0, self.std)
        return stream.with_features((stream.features - self.mean) / scale)


def standardize_stream(stream: LabeledStream,
                       logger: Optional[logging.Logger] = None) -> Tuple[LabeledStream, StandardizationRecord]:
    """Per-coordinate zero mean, unit variance (population moments)

    Zero-variance coordinates are centred only and flagged in the record.

    Raises:
        DomainError: If the stream has fewer than two items
    """
    if stream.length < 2:
        raise DomainError(f"standardization needs t >= 2, got {stream.length}")
    mean = stream.features.mean(axis=0)
    centred = stream.features - mean
    std = np.sqrt(np.mean(centred * centred, axis=0))
    zero_variance = std == 0.0
    if np.any(zero_variance):
        (logger or logging.getLogger("StreamCert")).warning(
            f"{int(zero_variance.sum())} zero-variance coordinate(s) were centred only")
    record = StandardizationRecord(mean=mean, std=std, zero_variance=zero_variance)
    return record.apply(stream), record
