"""Multilayer perceptrons for scalar regression, trained with Adam on MSE.

The functional core (:func:`init_model`, :func:`forward`,
:func:`backprop_gradients`, :func:`adam_step`, :func:`train`) operates on
:class:`TrainedModel` records. :class:`MLPRegressor` wraps it in the
scikit-learn estimator interface.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features, check_targets

ACTIVATIONS = ("relu", "sigmoid", "tanh", "elu")
INITIALIZERS = ("uniform_glorot", "normal_glorot", "uniform_he", "normal_he")
MAX_LAYERS = 20
MAX_NEURONS = 20
FORMAT_VERSION = 1


class TestDataLeakError(RuntimeError):
    """Raised when a test-split dataset is handed to a training routine."""

    __test__ = False


@dataclass(frozen=True)
class LayerSpec:
    width: int
    activation: str = "relu"
    initializer: str = "uniform_glorot"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.initializer not in INITIALIZERS:
            raise ValueError(f"unknown initializer {self.initializer!r}")
        if int(self.width) < 1:
            raise ValueError("layer width must be >= 1")


@dataclass(frozen=True)
class ArchitectureSpec:
    """Hidden-layer description of an MLP with one linear output neuron.

    An empty ``hidden_layers`` tuple describes a plain linear model; the
    search space only ever produces 1..``max_layers`` layers.
    """

    input_dim: int
    hidden_layers: Tuple[LayerSpec, ...] = ()
    max_layers: int = MAX_LAYERS
    max_neurons: int = MAX_NEURONS

    def __post_init__(self):
        layers = tuple(l if isinstance(l, LayerSpec) else LayerSpec(*l) for l in self.hidden_layers)
        object.__setattr__(self, "hidden_layers", layers)
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if len(layers) > self.max_layers:
            raise ValueError(f"at most {self.max_layers} hidden layers allowed")
        for layer in layers:
            if layer.width > self.max_neurons:
                raise ValueError(f"layer width {layer.width} exceeds {self.max_neurons}")

    @property
    def widths(self) -> List[int]:
        return [l.width for l in self.hidden_layers]

    @property
    def layer_sizes(self) -> List[int]:
        return [self.input_dim] + self.widths + [1]


@dataclass
class TrainConfig:
    """Mini-batch Adam settings. ``train_fraction`` < 1 trains on a seeded subset."""

    epochs: int = 10
    batch_size: int = 100
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    train_fraction: float = 1.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 < self.train_fraction <= 1:
            raise ValueError("train_fraction must lie in (0, 1]")


@dataclass
class TrainedModel:
    spec: ArchitectureSpec
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    history: List[float] = field(default_factory=list)
    valid: bool = True

    @property
    def params(self) -> List[np.ndarray]:
        """Parameters interleaved as [W0, b0, W1, b1, ...]."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "TrainedModel":
        return TrainedModel(
            self.spec,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.history),
            self.valid,
        )


# activation -> (f, f' expressed through pre-activation z and output a)
def _elu(z):
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


_ACT = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(z.dtype)),
    "sigmoid": (lambda z: 0.5 * (1.0 + np.tanh(0.5 * z)), lambda z, a: a * (1.0 - a)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "elu": (_elu, lambda z, a: np.where(z > 0, 1.0, a + 1.0)),
}


def activate(name: str, z: np.ndarray) -> np.ndarray:
    return _ACT[name][0](z)


def init_bound(initializer: str, fan_in: int, fan_out: int) -> float:
    """Uniform half-width or normal standard deviation for an initializer family."""
    if initializer == "uniform_glorot":
        return math.sqrt(6.0 / (fan_in + fan_out))
    if initializer == "normal_glorot":
        return math.sqrt(2.0 / (fan_in + fan_out))
    if initializer == "uniform_he":
        return math.sqrt(6.0 / fan_in)
    if initializer == "normal_he":
        return math.sqrt(2.0 / fan_in)
    raise ValueError(f"unknown initializer {initializer!r}")


def init_model(spec: ArchitectureSpec, seed) -> TrainedModel:
    """Draw weights per layer initializer; biases start at zero.

    The output layer uses Glorot-uniform.
    """
    rng = np.random.default_rng(seed)
    sizes = spec.layer_sizes
    inits = [l.initializer for l in spec.hidden_layers] + ["uniform_glorot"]
    weights, biases = [], []
    for fan_in, fan_out, name in zip(sizes[:-1], sizes[1:], inits):
        scale = init_bound(name, fan_in, fan_out)
        if name.startswith("uniform"):
            w = rng.uniform(-scale, scale, size=(fan_in, fan_out))
        else:
            w = rng.normal(0.0, scale, size=(fan_in, fan_out))
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return TrainedModel(spec, weights, biases)


def _forward_all(model: TrainedModel, X: np.ndarray):
    pre, post = [], [X]
    a = X
    n_hidden = len(model.spec.hidden_layers)
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        if i < n_hidden:
            a = activate(model.spec.hidden_layers[i].activation, z)
        else:
            a = z
        pre.append(z)
        post.append(a)
    return pre, post


def forward(model: TrainedModel, X) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Predictions and hidden post-activations.

    Accepts one input vector or a 2D batch. For a single vector the
    prediction is a float and the trace holds one 1D array per hidden
    layer; for a batch, arrays gain a leading sample axis.
    """
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X2 = X.reshape(1, -1) if single else X
    if X2.ndim != 2 or X2.shape[1] != model.spec.input_dim:
        raise ValueError(f"expected inputs of length {model.spec.input_dim}, got shape {X.shape}")
    _, post = _forward_all(model, X2)
    pred = post[-1][:, 0]
    trace = post[1:-1]
    if single:
        return float(pred[0]), [t[0] for t in trace]
    return pred, trace


def predict(model: TrainedModel, X) -> np.ndarray:
    return forward(model, np.atleast_2d(X))[0]


def mse(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise ValueError("mse of empty input")
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} targets")
    return float(np.mean((p - t) ** 2))


def backprop_gradients(model: TrainedModel, X, y) -> List[np.ndarray]:
    """Exact gradient of the batch MSE, in the order of ``model.params``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(X) == 0:
        raise ValueError("empty batch")
    pre, post = _forward_all(model, X)
    delta = (2.0 / len(X)) * (post[-1][:, 0] - y)[:, None]
    grads: List[np.ndarray] = []
    for i in range(len(model.weights) - 1, -1, -1):
        gw = post[i].T @ delta
        gb = delta.sum(axis=0)
        grads.extend((gb, gw))
        if i > 0:
            da = delta @ model.weights[i].T
            act = model.spec.hidden_layers[i - 1].activation
            delta = da * _ACT[act][1](pre[i - 1], post[i])
    grads.reverse()
    return grads


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, t: int, config: TrainConfig):
    """Bias-corrected Adam update. Returns new parameter arrays and the updated state."""
    if t < 1:
        raise ValueError("step index t must be >= 1")
    b1, b2 = config.beta1, config.beta2
    new_params, ms, vs = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_params.append(p - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon))
        ms.append(m)
        vs.append(v)
    return new_params, AdamState(ms, vs, t)


def _set_params(model: TrainedModel, params: Sequence[np.ndarray]) -> None:
    model.weights = list(params[0::2])
    model.biases = list(params[1::2])


def train(model: TrainedModel, X, y, config: TrainConfig, split: str | None = None) -> TrainedModel:
    """Train a copy of ``model`` with shuffled mini-batch Adam.

    ``history`` records the full training-set MSE after each epoch. If the
    loss becomes non-finite, training stops and the returned model has
    ``valid = False``. Passing ``split="test"`` raises
    :class:`TestDataLeakError`.
    """
    if split == "test":
        raise TestDataLeakError("refusing to train on a test split")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(X) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    if config.train_fraction < 1.0:
        keep = max(1, int(round(config.train_fraction * len(X))))
        idx = np.sort(rng.choice(len(X), size=keep, replace=False))
        X, y = X[idx], y[idx]

    model = model.copy()
    model.history = []
    params = model.params
    state = AdamState.zeros_like(params)
    step = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(config.epochs):
            order = rng.permutation(len(X))
            for start in range(0, len(X), config.batch_size):
                batch = order[start:start + config.batch_size]
                grads = backprop_gradients(model, X[batch], y[batch])
                step += 1
                params, state = adam_step(params, grads, state, step, config)
                _set_params(model, params)
            loss = float(np.mean((predict(model, X) - y) ** 2))
            model.history.append(loss)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(p)) for p in params):
                model.valid = False
                break
    return model


def evaluate(model: TrainedModel, X, y) -> Tuple[float, Dict[float, float]]:
    """Global MSE and the MSE of each distinct target value, in ascending order."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(y) == 0:
        raise ValueError("empty evaluation set")
    err = (predict(model, X) - y) ** 2
    per_t = {float(t): float(err[y == t].mean()) for t in np.unique(y)}
    return float(err.mean()), per_t


def model_to_dict(model: TrainedModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "input_dim": model.spec.input_dim,
        "widths": model.spec.widths,
        "activations": [l.activation for l in model.spec.hidden_layers],
        "initializers": [l.initializer for l in model.spec.hidden_layers],
        "max_layers": model.spec.max_layers,
        "max_neurons": model.spec.max_neurons,
        "valid": model.valid,
        "history": model.history,
        "weights": [{"shape": list(w.shape), "data": w.reshape(-1).tolist()} for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }


def model_from_dict(data: dict) -> TrainedModel:
    if data.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {data.get('format_version')!r}")
    spec = ArchitectureSpec(
        data["input_dim"],
        tuple(LayerSpec(w, a, i) for w, a, i in zip(data["widths"], data["activations"], data["initializers"])),
        data.get("max_layers", MAX_LAYERS),
        data.get("max_neurons", MAX_NEURONS),
    )
    weights = [np.array(w["data"], dtype=np.float64).reshape(w["shape"]) for w in data["weights"]]
    biases = [np.array(b, dtype=np.float64) for b in data["biases"]]
    expected = list(zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]))
    if [w.shape for w in weights] != expected or [b.shape for b in biases] != [(o,) for _, o in expected]:
        raise ValueError("parameter shapes do not match the architecture")
    return TrainedModel(spec, weights, biases, list(data.get("history", [])), bool(data.get("valid", True)))


def save_model(model: TrainedModel, path) -> None:
    # json writes floats with repr(), which round-trips exactly
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1, allow_nan=True)
        fh.write("\n")


def load_model(path) -> TrainedModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


class MLPRegressor(RegressorMixin, BaseEstimator):
    """Scikit-learn style wrapper around the MLP core.

    Parameters
    ----------
    hidden_layers : sequence of (width, activation, initializer)
        Hidden layer description. Empty gives a linear model.
    epochs, batch_size, learning_rate, beta1, beta2, epsilon :
        Adam training settings.
    random_state : int
        Seeds both initialization and mini-batch shuffling.

    Attributes
    ----------
    model_ : TrainedModel
    loss_curve_ : list of float
        Training-set MSE after each epoch.
    """

    def __init__(self, hidden_layers=((10, "relu", "uniform_glorot"),), epochs=10, batch_size=100,
                 learning_rate=0.001, beta1=0.9, beta2=0.999, epsilon=1e-8, random_state=0):
        self.hidden_layers = hidden_layers
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.learning_rate, self.beta1,
                           self.beta2, self.epsilon, self.random_state)

    def fit(self, X, y):
        X = check_features(X)
        y = check_targets(y, len(X))
        spec = ArchitectureSpec(X.shape[1], tuple(LayerSpec(*l) for l in self.hidden_layers))
        self.model_ = train(init_model(spec, self.random_state), X, y, self._train_config())
        self.loss_curve_ = list(self.model_.history)
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_model(cls, model: TrainedModel) -> "MLPRegressor":
        est = cls(hidden_layers=tuple((l.width, l.activation, l.initializer) for l in model.spec.hidden_layers))
        est.model_ = model
        est.loss_curve_ = list(model.history)
        est.n_features_in_ = model.spec.input_dim
        return est

    def predict(self, X):
        check_is_fitted(self, "model_")
        return predict(self.model_, check_features(X, self.n_features_in_))

    def activations(self, X) -> List[np.ndarray]:
        """Hidden post-activations, one ``(n_samples, width)`` array per layer."""
        check_is_fitted(self, "model_")
        return forward(self.model_, check_features(X, self.n_features_in_))[1]
