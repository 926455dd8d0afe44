"""Feedforward network regressing modal coefficients against time.

Plain numpy: forward pass, hand-written backpropagation of the mean squared
error, and full-batch optimisers (gradient descent, momentum, Adam). Inputs
are min-max scaled to [0, 1]; every output is standardised with the mean and
standard deviation of the training targets.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import InvalidArgumentError, TrainingDivergedError
from .io import read_container, write_container, write_csv

ACTIVATIONS = ("relu", "tanh")
OPTIMIZERS = ("gd", "momentum", "adam")

# Hyperparameters reported for the full-scale networks (one per variable).
TABLE1 = {
    "pressure": dict(neurons=500, activation="relu", epochs=50_000, learning_rate=1.00e-6),
    "velocity": dict(neurons=850, activation="tanh", epochs=100_000, learning_rate=8.25e-6),
    "wss": dict(neurons=900, activation="tanh", epochs=100_000, learning_rate=5.50e-6),
}
TABLE1_HIDDEN_LAYERS = 3


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50_000
    learning_rate: float = 1.0e-6
    neurons: int = 500
    hidden_layers: int = TABLE1_HIDDEN_LAYERS
    activation: str = "relu"
    train_fraction: float = 0.95
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidArgumentError("epochs must be >= 1")
        if not (0.0 < self.train_fraction < 1.0):
            raise InvalidArgumentError("train_fraction must lie in (0, 1)")
        if not self.learning_rate >= 0.0:
            raise InvalidArgumentError("learning_rate must be non-negative")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgumentError(f"activation must be one of {ACTIVATIONS}")
        if self.optimizer not in OPTIMIZERS:
            raise InvalidArgumentError(f"optimizer must be one of {OPTIMIZERS}")
        if self.neurons < 1 or self.hidden_layers < 0:
            raise InvalidArgumentError("network must have positive width")

    @classmethod
    def table1(cls, variable, **overrides):
        return cls(hidden_layers=TABLE1_HIDDEN_LAYERS, **{**TABLE1[variable], **overrides})

    def layer_sizes(self, n_out):
        return [1] + [self.neurons] * self.hidden_layers + [n_out]


@dataclass(frozen=True, eq=False)
class MlpModel:
    layer_sizes: tuple
    weights: tuple
    biases: tuple
    activation: str = "tanh"
    input_offset: float = 0.0
    input_scale: float = 1.0
    output_mean: np.ndarray = field(default=None)
    output_std: np.ndarray = field(default=None)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise InvalidArgumentError("one weight matrix and bias per layer required")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (sizes[k], sizes[k + 1]) or b.shape != (sizes[k + 1],):
                raise InvalidArgumentError(f"layer {k} has inconsistent shapes")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgumentError(f"unknown activation {self.activation!r}")
        n_out = sizes[-1]
        mean = np.zeros(n_out) if self.output_mean is None else np.asarray(self.output_mean, float)
        std = np.ones(n_out) if self.output_std is None else np.asarray(self.output_std, float)
        if self.input_scale == 0 or np.any(std == 0):
            raise InvalidArgumentError("scalers must be invertible")
        object.__setattr__(self, "output_mean", mean)
        object.__setattr__(self, "output_std", std)

    @property
    def n_outputs(self):
        return self.layer_sizes[-1]

    def scale_input(self, t):
        return (np.asarray(t, float) - self.input_offset) / self.input_scale

    def scale_output(self, y):
        return (np.asarray(y, float) - self.output_mean) / self.output_std

    def unscale_output(self, z):
        return np.asarray(z, float) * self.output_std + self.output_mean

    def with_params(self, weights, biases):
        return replace(self, weights=tuple(weights), biases=tuple(biases))


@dataclass(frozen=True, eq=False)
class CoefficientDataset:
    inputs: np.ndarray
    targets: np.ndarray
    train_mask: np.ndarray | None = None
    val_mask: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.inputs, float).reshape(-1)
        y = np.asarray(self.targets, float)
        if y.ndim == 1:
            y = y[:, None]
        if len(x) != len(y):
            raise InvalidArgumentError("one target row per input required")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)
        for name in ("train_mask", "val_mask"):
            m = getattr(self, name)
            if m is not None:
                object.__setattr__(self, name, np.asarray(m, bool))
        if self.train_mask is not None and self.val_mask is not None:
            if np.any(self.train_mask & self.val_mask) or not np.all(self.train_mask | self.val_mask):
                raise InvalidArgumentError("train/validation masks must partition the data")

    def __len__(self):
        return len(self.inputs)

    def split(self, train_fraction, seed):
        tr, va = split_dataset(len(self), train_fraction, seed)
        return replace(self, train_mask=tr, val_mask=va)


def split_dataset(n, train_fraction, seed):
    """Random disjoint masks with ``round(f * n)`` training samples."""
    n = len(n) if hasattr(n, "__len__") else int(n)
    if n < 2:
        raise InvalidArgumentError("need at least two samples to split")
    n_train = int(round(train_fraction * n))
    if n_train <= 0 or n_train >= n:
        raise InvalidArgumentError(
            f"train fraction {train_fraction} leaves an empty partition for n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    train = np.zeros(n, dtype=bool)
    train[perm[:n_train]] = True
    return train, ~train


def init_model(layer_sizes, activation="tanh", seed=0):
    """Fan-in scaled uniform weights, zero biases.

    Bounds are ``sqrt(6 / fan_in)`` for ReLU and ``sqrt(3 / fan_in)`` for
    tanh.
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise InvalidArgumentError(f"invalid layer sizes {layer_sizes}")
    if activation not in ACTIVATIONS:
        raise InvalidArgumentError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed)
    gain = 6.0 if activation == "relu" else 3.0
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(gain / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(tuple(sizes), tuple(weights), tuple(biases), activation)


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z, a, kind):
    return (z > 0).astype(float) if kind == "relu" else 1.0 - a * a


def _forward_scaled(model, x):
    """Forward pass in scaled space; returns pre-activations and activations."""
    a = x.reshape(-1, 1)
    zs, acts = [], [a]
    last = len(model.weights) - 1
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W + b
        a = z if k == last else _act(z, model.activation)
        zs.append(z)
        acts.append(a)
    return zs, acts


def forward(model, t):
    """Coefficients in physical units for times ``t`` (shape ``(n, L)``)."""
    t = np.atleast_1d(np.asarray(t, float))
    if not np.all(np.isfinite(t)):
        raise InvalidArgumentError("non-finite network input")
    _, acts = _forward_scaled(model, model.scale_input(t))
    return model.unscale_output(acts[-1])


def _mask(dataset, mask):
    if mask is None:
        return np.ones(len(dataset), bool)
    m = np.asarray(mask, bool)
    if not m.any():
        raise InvalidArgumentError("empty mask")
    return m


def mse_loss(model, dataset, mask=None):
    """Mean squared error in scaled target space over the masked samples."""
    m = _mask(dataset, mask)
    _, acts = _forward_scaled(model, model.scale_input(dataset.inputs[m]))
    r = acts[-1] - model.scale_output(dataset.targets[m])
    return float(np.mean(r * r))


def backward(model, x_scaled, y_scaled):
    """Loss and gradients w.r.t. every weight and bias for a scaled batch."""
    x_scaled = np.asarray(x_scaled, float).reshape(-1)
    if len(x_scaled) == 0:
        raise InvalidArgumentError("empty batch")
    zs, acts = _forward_scaled(model, x_scaled)
    r = acts[-1] - y_scaled
    loss = float(np.mean(r * r))
    delta = 2.0 * r / r.size
    n_layers = len(model.weights)
    gW, gb = [None] * n_layers, [None] * n_layers
    for k in range(n_layers - 1, -1, -1):
        gW[k] = acts[k].T @ delta
        gb[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ model.weights[k].T) * _act_grad(zs[k - 1], acts[k], model.activation)
    return loss, gW, gb


def fit_scalers(model, t, y):
    t = np.asarray(t, float)
    span = float(t.max() - t.min())
    std = y.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return replace(model, input_offset=float(t.min()), input_scale=span if span > 0 else 1.0,
                   output_mean=y.mean(axis=0), output_std=std)


@dataclass(frozen=True)
class LossHistory:
    train: np.ndarray
    validation: np.ndarray

    def write_csv(self, path):
        rows = ((i + 1, a, b) for i, (a, b) in enumerate(zip(self.train, self.validation)))
        return write_csv(path, ["epoch", "train_loss", "val_loss"], rows)


def train(model, dataset, cfg):
    """Full-batch training on ``dataset.train_mask``; returns ``(model, LossHistory)``.

    Scalers must already be set on ``model`` (see :func:`fit_scalers`).
    """
    tr = _mask(dataset, dataset.train_mask)
    va = dataset.val_mask if dataset.val_mask is not None and dataset.val_mask.any() else None
    x = model.scale_input(dataset.inputs[tr])
    y = model.scale_output(dataset.targets[tr])
    if va is not None:
        xv = model.scale_input(dataset.inputs[va])
        yv = model.scale_output(dataset.targets[va])

    W = [w.copy() for w in model.weights]
    b = [v.copy() for v in model.biases]
    params = W + b
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    lr = cfg.learning_rate
    beta1, beta2, eps, mu = 0.9, 0.999, 1e-8, 0.9
    hist_t = np.empty(cfg.epochs)
    hist_v = np.full(cfg.epochs, np.nan)
    current = model
    for epoch in range(cfg.epochs):
        current = model.with_params(W, b)
        loss, gW, gb = backward(current, x, y)
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"non-finite loss at epoch {epoch + 1}", epoch=epoch + 1)
        hist_t[epoch] = loss
        if va is not None:
            _, acts = _forward_scaled(current, xv)
            hist_v[epoch] = float(np.mean((acts[-1] - yv) ** 2))
        grads = gW + gb
        if cfg.optimizer == "gd":
            for p, g in zip(params, grads):
                p -= lr * g
        elif cfg.optimizer == "momentum":
            for p, g, v in zip(params, grads, m1):
                v *= mu
                v -= lr * g
                p += v
        else:
            c1 = 1.0 - beta1 ** (epoch + 1)
            c2 = 1.0 - beta2 ** (epoch + 1)
            for p, g, m, s in zip(params, grads, m1, m2):
                m *= beta1
                m += (1 - beta1) * g
                s *= beta2
                s += (1 - beta2) * g * g
                p -= lr * (m / c1) / (np.sqrt(s / c2) + eps)
    return model.with_params(W, b), LossHistory(hist_t, hist_v)


# ----------------------------------------------------------------------
# persistence


def save_model(path, model, meta=None):
    arrays = {"output_mean": model.output_mean, "output_std": model.output_std}
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"W{k:02d}"] = W
        arrays[f"b{k:02d}"] = b
    info = {"kind": "mlp-model", "version": 1, "layer_sizes": list(model.layer_sizes),
            "activation": model.activation, "input_offset": model.input_offset,
            "input_scale": model.input_scale}
    info.update(meta or {})
    return write_container(path, arrays, info)


def load_model(path):
    arrays, meta = read_container(path)
    if meta.get("kind") != "mlp-model":
        raise InvalidArgumentError(f"{path}: not a network file")
    n = len(meta["layer_sizes"]) - 1
    return MlpModel(
        layer_sizes=tuple(meta["layer_sizes"]),
        weights=tuple(arrays[f"W{k:02d}"] for k in range(n)),
        biases=tuple(arrays[f"b{k:02d}"] for k in range(n)),
        activation=meta["activation"],
        input_offset=float(meta["input_offset"]),
        input_scale=float(meta["input_scale"]),
        output_mean=arrays["output_mean"],
        output_std=arrays["output_std"],
    ), meta


# ----------------------------------------------------------------------
# estimator


class CoefficientNetwork(RegressorMixin, BaseEstimator):
    """Multi-output MLP regressor ``t -> coefficients``.

    ``fit`` holds out ``1 - train_fraction`` of the samples for validation;
    the held-out indices are kept in ``val_mask_``.
    """

    def __init__(self, neurons=64, hidden_layers=3, activation="tanh", epochs=5000,
                 learning_rate=1e-3, optimizer="adam", train_fraction=0.95, seed=0):
        self.neurons = neurons
        self.hidden_layers = hidden_layers
        self.activation = activation
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.train_fraction = train_fraction
        self.seed = seed

    def _config(self):
        return TrainConfig(epochs=self.epochs, learning_rate=self.learning_rate,
                           neurons=self.neurons, hidden_layers=self.hidden_layers,
                           activation=self.activation, train_fraction=self.train_fraction,
                           seed=self.seed, optimizer=self.optimizer)

    def fit(self, X, y):
        X = check_array(X, ensure_min_samples=2)
        if X.shape[1] != 1:
            raise InvalidArgumentError("the network input is a single time column")
        Y = np.asarray(y, float)
        self._single_output = Y.ndim == 1
        Y = Y.reshape(len(X), -1)
        cfg = self._config()
        data = CoefficientDataset(X[:, 0], Y).split(cfg.train_fraction, cfg.seed)
        model = init_model(cfg.layer_sizes(Y.shape[1]), cfg.activation, cfg.seed)
        model = fit_scalers(model, data.inputs[data.train_mask], data.targets[data.train_mask])
        self.model_, self.history_ = train(model, data, cfg)
        self.train_mask_, self.val_mask_ = data.train_mask, data.val_mask
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        out = forward(self.model_, X[:, 0])
        return out[:, 0] if self._single_output else out
