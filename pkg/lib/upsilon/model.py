"""Contains functions to build, evaluate and train the desk-scale classifier.

The classifier is a one- or two-layer softmax network written in numpy with
analytic gradients, an Adam optimizer and an exponential moving average of
its parameters for evaluation.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy.special import log_softmax, softmax

import config as cfg
from labels import DimensionMismatchError, PredictionMatrix, SampleBatch

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class ClassifierParams:
    """Weights of the classifier.

    With hidden units: x -> act(x @ w1 + b1) -> @ w2 + b2 -> softmax.
    Without (w1 and b1 are None): x -> x @ w2 + b2 -> softmax.
    """

    w2: np.ndarray
    b2: np.ndarray
    w1: Optional[np.ndarray] = None
    b1: Optional[np.ndarray] = None
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"Unknown activation '{self.activation}', use one of {ACTIVATIONS}")
        if (self.w1 is None) != (self.b1 is None):
            raise ValueError("w1 and b1 must both be set or both be None")

    @property
    def hidden_units(self):
        return 0 if self.w1 is None else self.w1.shape[1]

    @property
    def n_classes(self):
        return self.w2.shape[1]

    @property
    def dim(self):
        return self.w2.shape[0] if self.w1 is None else self.w1.shape[0]

    def arrays(self) -> Dict[str, np.ndarray]:
        """Named parameter tensors in a fixed order."""
        out = {} if self.w1 is None else {"w1": self.w1, "b1": self.b1}
        out.update({"w2": self.w2, "b2": self.b2})

        return out

    def with_arrays(self, arrays: Dict[str, np.ndarray]):
        return ClassifierParams(
            w2=arrays["w2"], b2=arrays["b2"], w1=arrays.get("w1"), b1=arrays.get("b1"), activation=self.activation
        )

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays().values())


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))

    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def buildClassifier(input_size: int, num_labels: int, hidden_units: int = None, activation: str = None, seed: int = None):
    """Builds a classifier.

    Weights are Glorot-uniform, biases zero.

    Args:
        input_size: Size of the input.
        num_labels: Output size, k_id + k_extra.
        hidden_units: If > 0, creates a hidden layer with the given number of units.
            Defaults to cfg.HIDDEN_UNITS.
        activation: Hidden activation, 'relu' or 'tanh'. Defaults to cfg.HIDDEN_ACTIVATION.
        seed: Seed of the initialization.

    Returns:
        New `ClassifierParams`.
    """
    hidden_units = cfg.HIDDEN_UNITS if hidden_units is None else hidden_units
    activation = activation or cfg.HIDDEN_ACTIVATION
    rng = np.random.default_rng(cfg.RANDOM_SEED if seed is None else seed)

    if hidden_units > 0:
        return ClassifierParams(
            w1=_glorot(rng, input_size, hidden_units),
            b1=np.zeros(hidden_units),
            w2=_glorot(rng, hidden_units, num_labels),
            b2=np.zeros(num_labels),
            activation=activation,
        )

    return ClassifierParams(w2=_glorot(rng, input_size, num_labels), b2=np.zeros(num_labels), activation=activation)


def _features(params: ClassifierParams, batch):
    x = batch.features if isinstance(batch, SampleBatch) else np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.dim:
        raise DimensionMismatchError(f"Classifier expects {params.dim} features, got shape {x.shape}")

    return x


def _activate(params, a):
    return np.maximum(a, 0.0) if params.activation == "relu" else np.tanh(a)


def _logits(params: ClassifierParams, x):
    if params.w1 is None:
        return None, None, x @ params.w2 + params.b2
    a = x @ params.w1 + params.b1
    h = _activate(params, a)

    return a, h, h @ params.w2 + params.b2


def forward(params: ClassifierParams, batch):
    """Posteriors of the classifier for a batch.

    Args:
        params: The classifier.
        batch: A `SampleBatch` or an (n, d) array.

    Returns:
        A `PredictionMatrix` with params.n_classes columns.
    """
    x = _features(params, batch)

    return PredictionMatrix(softmax(_logits(params, x)[2], axis=1))


def cross_entropy(params: ClassifierParams, x, y):
    """Mean cross-entropy of integer labels y; 0 for an empty batch."""
    x = _features(params, x)
    if x.shape[0] == 0:
        return 0.0
    logp = log_softmax(_logits(params, x)[2], axis=1)

    return float(-logp[np.arange(x.shape[0]), np.asarray(y, dtype=np.int64)].mean())


def loss_and_grads(params: ClassifierParams, x_l, y_l, x_p=None, y_p=None, lambda_weight: float = 1.0):
    """Loss CE(labeled) + lambda * CE(pseudo) and its analytic gradients.

    Each cross-entropy is the mean over its own batch. The pseudo batch
    only enters the gradient when lambda_weight > 0.

    Returns:
        (labeled_loss, pseudo_loss, grads) with grads keyed like params.arrays().
    """
    x_l = _features(params, x_l)
    y_l = np.asarray(y_l, dtype=np.int64)
    n_classes = params.n_classes

    if np.any((y_l < 0) | (y_l >= n_classes)):
        raise ValueError(f"Labels outside 0..{n_classes - 1}")

    parts = [(x_l, y_l, 1.0)]
    pseudo_loss = 0.0

    if x_p is not None and len(x_p) > 0:
        x_p = _features(params, x_p)
        y_p = np.asarray(y_p, dtype=np.int64)
        pseudo_loss = cross_entropy(params, x_p, y_p)
        if lambda_weight > 0:
            parts.append((x_p, y_p, float(lambda_weight)))

    x = np.concatenate([p[0] for p in parts]) if len(parts) > 1 else x_l
    a, h, z = _logits(params, x)
    probs = softmax(z, axis=1)

    # dL/dz of each part: weight * (softmax - onehot) / part size
    dz = probs
    offset = 0
    for xp, yp, w in parts:
        n = xp.shape[0]
        block = dz[offset : offset + n]
        block[np.arange(n), yp] -= 1.0
        block *= w / n
        offset += n

    logp_l = log_softmax(z[: x_l.shape[0]], axis=1)
    labeled_loss = float(-logp_l[np.arange(x_l.shape[0]), y_l].mean())

    grads = {}
    inputs = x if h is None else h
    grads["w2"] = inputs.T @ dz
    grads["b2"] = dz.sum(axis=0)

    if h is not None:
        dh = dz @ params.w2.T
        da = dh * (a > 0) if params.activation == "relu" else dh * (1.0 - h**2)
        grads["w1"] = x.T @ da
        grads["b1"] = da.sum(axis=0)

    return labeled_loss, pseudo_loss, {k: grads[k] for k in params.arrays()}


@dataclass
class AdamState:
    """Moment estimates of Adam (beta1 0.9, beta2 0.999, eps 1e-8)."""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ClassifierParams):
        arrays = params.arrays()

        return cls({k: np.zeros_like(a) for k, a in arrays.items()}, {k: np.zeros_like(a) for k, a in arrays.items()})


def adam_update(params: ClassifierParams, grads, state: AdamState, lr: float):
    """One Adam step. Returns the new params; `state` is advanced in place."""
    state.t += 1
    updated = {}

    for k, p in params.arrays().items():
        g = grads[k]
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g
        m_hat = state.m[k] / (1.0 - state.beta1**state.t)
        v_hat = state.v[k] / (1.0 - state.beta2**state.t)
        updated[k] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)

    return params.with_arrays(updated)


@dataclass(frozen=True)
class StepLosses:
    labeled: float
    pseudo: float
    total: float


def supervised_step(params: ClassifierParams, state: AdamState, labeled, pseudo=None, lambda_weight=1.0, lr=None):
    """One supervised update on D_l and the pseudo-labeled samples.

    Args:
        params: Current classifier.
        state: Adam state, advanced in place.
        labeled: (x, y) of the labeled batch, must be nonempty.
        pseudo: Optional (x, y) of the pseudo-labeled batch.
        lambda_weight: Weight of the pseudo-label loss, in [0, 1].
        lr: Learning rate. Defaults to cfg.LEARNING_RATE.

    Returns:
        (new params, StepLosses)
    """
    if not 0.0 <= lambda_weight <= 1.0:
        raise ValueError(f"lambda_weight must be in [0, 1], got {lambda_weight}")

    x_l, y_l = labeled
    if len(x_l) == 0:
        raise ValueError("Empty labeled batch")

    x_p, y_p = pseudo if pseudo is not None else (None, None)
    l_loss, p_loss, grads = loss_and_grads(params, x_l, y_l, x_p, y_p, lambda_weight)
    new_params = adam_update(params, grads, state, cfg.LEARNING_RATE if lr is None else lr)

    return new_params, StepLosses(l_loss, p_loss, l_loss + lambda_weight * p_loss)


class EmaModel:
    """Exponential moving average of the classifier parameters.

    After each update shadow = d * shadow + (1 - d) * current, with
    d = decay, or min(decay, (1 + t) / (10 + t)) at update t while warming up.
    """

    def __init__(self, params: ClassifierParams, decay: float = None, warmup: bool = None):
        self.decay = cfg.EMA_DECAY if decay is None else decay
        self.warmup = cfg.EMA_WARMUP if warmup is None else warmup
        self.shadow = params
        self.num_updates = 0

        if not 0.0 <= self.decay < 1.0:
            raise ValueError(f"EMA decay must be in [0, 1), got {self.decay}")

    def effective_decay(self):
        if self.warmup:
            return min(self.decay, (1.0 + self.num_updates) / (10.0 + self.num_updates))

        return self.decay

    def update(self, params: ClassifierParams):
        d = self.effective_decay()
        current = params.arrays()
        self.shadow = self.shadow.with_arrays({k: d * s + (1.0 - d) * current[k] for k, s in self.shadow.arrays().items()})
        self.num_updates += 1

        return self.shadow


def saveClassifier(params: ClassifierParams, path: str):
    """Saves a classifier snapshot as compressed npz."""
    np.savez_compressed(path, activation=np.array(params.activation), **params.arrays())


def loadClassifier(path: str):
    """Loads a snapshot written by `saveClassifier`."""
    with np.load(path, allow_pickle=False) as data:
        arrays = {k: data[k] for k in data.files if k != "activation"}
        return ClassifierParams(
            w2=arrays["w2"], b2=arrays["b2"], w1=arrays.get("w1"), b1=arrays.get("b1"), activation=str(data["activation"])
        )
