import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
from lumino.stream_cert.constants import (
    DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_HIDDEN_WIDTH, DEFAULT_LEARNING_RATE,
    DEFAULT_MOMENTUM, DEFAULT_WEIGHT_DECAY, MODEL_FORMAT_VERSION
)
from lumino.stream_cert.error_handler import DomainError, ParseError, TrainingError
from lumino.stream_cert.event_handler import EventHandler
from lumino.stream_cert.stream import LabeledStream, WindowView, window_labels
from lumino.stream_cert.utils import load_json_file, save_json_file

WindowLike = Union[WindowView, np.ndarray]


class Architecture(str, Enum):
    LINEAR = 'linear'
    MLP1 = 'mlp1'


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Window classifier over the flattened, front-padded window (w·D inputs)

    Linear: scores = W x + b.
    MLP1:   scores = W2 tanh(W1 x + b1) + b2.
    """
    architecture: Architecture
    window_size: int
    num_features: int
    num_classes: int
    params: Dict[str, np.ndarray]
    hidden_width: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'architecture', Architecture(self.architecture))
        if self.window_size < 1 or self.num_features < 1 or self.num_classes < 1:
            raise DomainError("window size, feature count and class count must be positive")
        params = {name: np.array(value, dtype=np.float64) for name, value in self.params.items()}
        expected = _param_shapes(self.architecture, self.input_dim, self.num_classes, self.hidden_width)
        for name, shape in expected.items():
            if name not in params:
                raise DomainError(f"missing parameter '{name}'")
            if params[name].shape != shape:
                raise DomainError(f"parameter '{name}' has shape {params[name].shape}, expected {shape}")
            if not np.all(np.isfinite(params[name])):
                raise DomainError(f"parameter '{name}' has non-finite entries")
            params[name].setflags(write=False)
        object.__setattr__(self, 'params', {name: params[name] for name in expected})

    @property
    def input_dim(self) -> int:
        return self.window_size * self.num_features

    def replace(self, **params: np.ndarray) -> 'ModelParams':
        merged = dict(self.params)
        merged.update(params)
        return ModelParams(self.architecture, self.window_size, self.num_features,
                           self.num_classes, merged, self.hidden_width)


def _param_shapes(arch: Architecture, input_dim: int, num_classes: int,
                  hidden_width: int) -> Dict[str, Tuple[int, ...]]:
    if arch is Architecture.LINEAR:
        return {'W': (num_classes, input_dim), 'b': (num_classes,)}
    if hidden_width < 1:
        raise DomainError(f"mlp1 needs hidden_width >= 1, got {hidden_width}")
    return {'W1': (hidden_width, input_dim), 'b1': (hidden_width,),
            'W2': (num_classes, hidden_width), 'b2': (num_classes,)}


def init_params(architecture: Architecture, window_size: int, num_features: int, num_classes: int,
                hidden_width: int = DEFAULT_HIDDEN_WIDTH, seed: int = 0) -> ModelParams:
    """Random initialization with N(0, 1/fan_in) weights and zero biases"""
    architecture = Architecture(architecture)
    rng = np.random.default_rng(seed)
    input_dim = window_size * num_features
    if architecture is Architecture.LINEAR:
        params = {'W': rng.normal(0.0, 1.0 / math.sqrt(input_dim), size=(num_classes, input_dim)),
                  'b': np.zeros(num_classes)}
        hidden_width = 0
    else:
        params = {'W1': rng.normal(0.0, 1.0 / math.sqrt(input_dim), size=(hidden_width, input_dim)),
                  'b1': np.zeros(hidden_width),
                  'W2': rng.normal(0.0, 1.0 / math.sqrt(hidden_width), size=(num_classes, hidden_width)),
                  'b2': np.zeros(num_classes)}
    return ModelParams(architecture, window_size, num_features, num_classes, params, hidden_width)


def _window_array(window: WindowLike) -> np.ndarray:
    features = window.features if isinstance(window, WindowView) else window
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features.reshape(1, -1)
    return features


def flatten_window(model: ModelParams, window: WindowLike) -> np.ndarray:
    """Front-pad a window of s <= w items with zeros and flatten it to w·D inputs

    Raises:
        DomainError: On a feature dimension mismatch or a window longer than w
    """
    features = _window_array(window)
    s, d = features.shape
    if d != model.num_features:
        raise DomainError(f"window has {d} features, model expects {model.num_features}")
    if not 1 <= s <= model.window_size:
        raise DomainError(f"window length {s} outside [1, {model.window_size}]")
    padded = np.zeros((model.window_size, d))
    padded[model.window_size - s:] = features
    return padded.reshape(-1)


def padded_windows(features: np.ndarray, w: int) -> np.ndarray:
    """All t windows of a (t, D) feature array, front-padded, shape (t, w, D)"""
    features = np.asarray(features, dtype=np.float64)
    t, d = features.shape
    padded = np.concatenate([np.zeros((w - 1, d)), features], axis=0)
    index = np.arange(t)[:, None] + np.arange(w)[None, :]
    return padded[index]


def real_item_mask(t: int, w: int) -> np.ndarray:
    """(t, w) mask that is False on the padding rows of the first windows"""
    steps = np.arange(1, t + 1)[:, None]
    slots = np.arange(w)[None, :]
    return slots >= (w - np.minimum(steps, w))


def forward_batch(model: ModelParams, inputs: np.ndarray) -> np.ndarray:
    """Scores for a batch of flattened windows, shape (n, num_classes)"""
    inputs = np.asarray(inputs, dtype=np.float64).reshape(-1, model.input_dim)
    p = model.params
    if model.architecture is Architecture.LINEAR:
        return inputs @ p['W'].T + p['b']
    hidden = np.tanh(inputs @ p['W1'].T + p['b1'])
    return hidden @ p['W2'].T + p['b2']


def forward(model: ModelParams, window: WindowLike) -> np.ndarray:
    """Class-score vector for one window"""
    return forward_batch(model, flatten_window(model, window))[0]


def predict_batch(model: ModelParams, inputs: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the smallest class id on ties
    return np.argmax(forward_batch(model, inputs), axis=1)


def predict(model: ModelParams, window: WindowLike) -> int:
    return int(np.argmax(forward(model, window)))


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def batch_loss_and_input_gradient(model: ModelParams, inputs: np.ndarray,
                                  targets: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-sample cross-entropy and its gradient w.r.t. the flattened inputs

    Args:
        model: Model parameters
        inputs: (n, w·D) flattened windows
        targets: (n,) class ids

    Returns:
        (losses of shape (n,), gradients of shape (n, w·D))
    """
    inputs = np.asarray(inputs, dtype=np.float64).reshape(-1, model.input_dim)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    p = model.params
    rows = np.arange(inputs.shape[0])
    if model.architecture is Architecture.LINEAR:
        scores = inputs @ p['W'].T + p['b']
        delta = softmax(scores)
        delta[rows, targets] -= 1.0
        grad = delta @ p['W']
    else:
        hidden = np.tanh(inputs @ p['W1'].T + p['b1'])
        scores = hidden @ p['W2'].T + p['b2']
        delta = softmax(scores)
        delta[rows, targets] -= 1.0
        grad = ((delta @ p['W2']) * (1.0 - hidden * hidden)) @ p['W1']
    losses = -_log_softmax(scores)[rows, targets]
    return losses, grad


def cross_entropy(model: ModelParams, window: WindowLike, target: int) -> float:
    losses, _ = batch_loss_and_input_gradient(model, flatten_window(model, window), np.array([target]))
    return float(losses[0])


def input_gradient(model: ModelParams, window: WindowLike, target: int) -> np.ndarray:
    """Gradient of the cross-entropy against ``target`` w.r.t. the window features

    Returns:
        Array shaped like the (unpadded) window, (s, D)
    """
    features = _window_array(window)
    _, grad = batch_loss_and_input_gradient(model, flatten_window(model, features), np.array([target]))
    grad = grad[0].reshape(model.window_size, model.num_features)
    return grad[model.window_size - features.shape[0]:]


def zero_one_performance(model: ModelParams, window: WindowLike, y: int) -> float:
    """f_i = 1 if the prediction equals the ground truth, else 0"""
    return 1.0 if predict(model, window) == int(y) else 0.0


@dataclass(frozen=True)
class PerformanceFn:
    """Per-step performance f_i with values in [0, 1]

    ``custom`` scorers receive (scores, label) and must return a value in
    [0, 1]; anything else is rejected when evaluated.
    """
    kind: str = 'zero_one'
    scorer: Optional[Callable[[np.ndarray, int], float]] = field(default=None, compare=False)

    @classmethod
    def zero_one(cls) -> 'PerformanceFn':
        return cls()

    @classmethod
    def custom(cls, scorer: Callable[[np.ndarray, int], float]) -> 'PerformanceFn':
        return cls(kind='custom', scorer=scorer)

    def batch(self, model: ModelParams, inputs: np.ndarray, labels: np.ndarray) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if self.kind == 'zero_one':
            return (predict_batch(model, inputs) == labels).astype(np.float64)
        scores = forward_batch(model, inputs)
        values = np.array([float(self.scorer(s, int(y))) for s, y in zip(scores, labels)])
        if np.any(~np.isfinite(values)) or values.min() < 0.0 or values.max() > 1.0:
            raise DomainError("custom performance values must lie in [0, 1]")
        return values

    def __call__(self, model: ModelParams, window: WindowLike, y: int) -> float:
        return float(self.batch(model, flatten_window(model, window), np.array([y]))[0])


def stream_performance(model: ModelParams, stream: LabeledStream,
                       performance: Optional[PerformanceFn] = None) -> Tuple[float, np.ndarray]:
    """Clean performance Z = Σ f_i / t and the per-step values f_i"""
    performance = performance or PerformanceFn.zero_one()
    w = model.window_size
    inputs = padded_windows(stream.features, w).reshape(stream.length, -1)
    values = performance.batch(model, inputs, window_labels(stream, w))
    return float(values.mean()), values


@dataclass(frozen=True)
class TrainConfig:
    """SGD settings; noise_sigma enables Gaussian noise augmentation"""
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    learning_rate: float = DEFAULT_LEARNING_RATE
    momentum: float = DEFAULT_MOMENTUM
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    noise_sigma: Optional[float] = None
    seed: int = 0
    hidden_width: int = DEFAULT_HIDDEN_WIDTH

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise DomainError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0 or not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise DomainError("invalid optimizer settings")
        if self.noise_sigma is not None and self.noise_sigma < 0:
            raise DomainError(f"noise_sigma must be nonnegative, got {self.noise_sigma}")


def _param_gradients(model: ModelParams, inputs: np.ndarray,
                     targets: np.ndarray) -> Tuple[float, Dict[str, np.ndarray]]:
    """Mean cross-entropy over the batch and its parameter gradients"""
    p = model.params
    n = inputs.shape[0]
    rows = np.arange(n)
    if model.architecture is Architecture.LINEAR:
        scores = inputs @ p['W'].T + p['b']
        delta = softmax(scores)
        delta[rows, targets] -= 1.0
        delta /= n
        grads = {'W': delta.T @ inputs, 'b': delta.sum(axis=0)}
    else:
        hidden = np.tanh(inputs @ p['W1'].T + p['b1'])
        scores = hidden @ p['W2'].T + p['b2']
        delta = softmax(scores)
        delta[rows, targets] -= 1.0
        delta /= n
        back = (delta @ p['W2']) * (1.0 - hidden * hidden)
        grads = {'W2': delta.T @ hidden, 'b2': delta.sum(axis=0),
                 'W1': back.T @ inputs, 'b1': back.sum(axis=0)}
    loss = float(np.mean(-_log_softmax(scores)[rows, targets]))
    return loss, grads


def _mean_loss(model: ModelParams, inputs: np.ndarray, targets: np.ndarray) -> float:
    losses, _ = batch_loss_and_input_gradient(model, inputs, targets)
    return float(losses.mean())


def train_sgd(stream: LabeledStream, w: int, architecture: Architecture,
              config: Optional[TrainConfig] = None,
              logger: Optional[logging.Logger] = None,
              event_handler: Optional[EventHandler] = None) -> ModelParams:
    """Train a window classifier with momentum SGD and a cosine learning rate

    Window targets are the majority labels. With ``noise_sigma`` set, every
    minibatch gets fresh Gaussian noise on the real (unpadded) items.

    Args:
        stream: Training stream, length >= w
        w: Window size
        architecture: linear or mlp1
        config: Training configuration
        logger: Optional logger
        event_handler: Optional event sink

    Returns:
        Trained ModelParams

    Raises:
        DomainError: If the stream is shorter than the window
        TrainingError: If the loss becomes non-finite
    """
    config = config or TrainConfig()
    logger = logger or logging.getLogger("StreamCert")
    if w < 1 or stream.length < w:
        raise DomainError(f"training stream (t={stream.length}) must be at least as long as the window (w={w})")

    model = init_params(architecture, w, stream.num_features, stream.num_classes,
                        config.hidden_width, seed=config.seed)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(1,)))

    windows = padded_windows(stream.features, w)
    inputs = windows.reshape(stream.length, -1)
    targets = window_labels(stream, w)
    mask = real_item_mask(stream.length, w)[:, :, None]

    initial_loss = _mean_loss(model, inputs, targets)
    if event_handler:
        event_handler.emit('TrainingStarted', architecture=model.architecture.value, w=w,
                           samples=stream.length, initial_loss=initial_loss,
                           noise_sigma=config.noise_sigma)

    velocity = {name: np.zeros_like(value) for name, value in model.params.items()}
    params = {name: value.copy() for name, value in model.params.items()}
    for epoch in range(config.epochs):
        lr = config.learning_rate * 0.5 * (1.0 + math.cos(math.pi * epoch / config.epochs))
        order = rng.permutation(stream.length)
        epoch_loss = 0.0
        for start in range(0, stream.length, config.batch_size):
            batch = order[start:start + config.batch_size]
            batch_windows = windows[batch]
            if config.noise_sigma:
                noise = rng.normal(0.0, config.noise_sigma, size=batch_windows.shape)
                batch_windows = batch_windows + noise * mask[batch]
            current = model.replace(**params)
            loss, grads = _param_gradients(current, batch_windows.reshape(len(batch), -1), targets[batch])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1} (lr={lr:.4g})")
            epoch_loss += loss * len(batch)
            for name, grad in grads.items():
                grad = grad + config.weight_decay * params[name]
                velocity[name] = config.momentum * velocity[name] + grad
                params[name] = params[name] - lr * velocity[name]
        if event_handler:
            event_handler.emit('EpochCompleted', epoch=epoch + 1, loss=epoch_loss / stream.length, lr=lr)

    model = model.replace(**params)
    final_loss = _mean_loss(model, inputs, targets)
    if not math.isfinite(final_loss):
        raise TrainingError("non-finite loss after training")
    if final_loss > initial_loss:
        logger.warning(f"Final training loss {final_loss:.4g} exceeds initial loss {initial_loss:.4g}")
    if event_handler:
        event_handler.emit('TrainingCompleted', final_loss=final_loss, initial_loss=initial_loss)
    return model


def model_to_dict(model: ModelParams) -> dict:
    return {
        'format_version': MODEL_FORMAT_VERSION,
        'architecture': model.architecture.value,
        'window_size': model.window_size,
        'num_features': model.num_features,
        'num_classes': model.num_classes,
        'hidden_width': model.hidden_width,
        'params': {name: value.tolist() for name, value in model.params.items()},
    }


def model_from_dict(data: dict, path: Optional[str] = None) -> ModelParams:
    version = data.get('format_version')
    if version != MODEL_FORMAT_VERSION:
        raise ParseError(f"unsupported model format version {version!r}", path=path)
    try:
        return ModelParams(architecture=Architecture(data['architecture']),
                           window_size=int(data['window_size']),
                           num_features=int(data['num_features']),
                           num_classes=int(data['num_classes']),
                           params={k: np.array(v, dtype=np.float64) for k, v in data['params'].items()},
                           hidden_width=int(data.get('hidden_width', 0)))
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"malformed model file ({e})", path=path)


def save_model(model: ModelParams, path: Union[str, Path]) -> None:
    """Write the versioned JSON parameter file"""
    save_json_file(path, model_to_dict(model))


def load_model(path: Union[str, Path]) -> ModelParams:
    """Read a parameter file written by save_model

    Raises:
        FileNotFoundError: If the file does not exist
        ParseError: On unknown versions or malformed content
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(2, "No such file or directory", str(path))
    data = load_json_file(path, default={'format_version': None})
    return model_from_dict(data, path=str(path))
