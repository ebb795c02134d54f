"""ReLU feedforward regressors used as system-response surrogates.

Training is plain Adam on mean-squared error with range normalization of
inputs and outputs to [0,1] (either side can be opted out), an adaptive
schedule that halves the learning rate on validation plateaus, and early
stopping.  Architecture selection trains every candidate in a library and
keeps the one with the least validation MSE.

``MLPSurrogate`` wraps the same training behind the scikit-learn estimator
API so the surrogate composes with the wider ecosystem; the functional
``train``/``select_architecture`` entry points are what the fine-tuning loop
uses directly.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

logger = logging.getLogger(__name__)

MODEL_SCHEMA_VERSION = 1


@dataclass
class AffineScaler:
    """Per-coordinate affine map y -> (y - offset) / scale."""

    offsets: np.ndarray
    scales: np.ndarray
    enabled: bool = True

    @classmethod
    def fit(cls, data: np.ndarray, enabled: bool = True) -> "AffineScaler":
        data = np.asarray(data, dtype=float)
        if not enabled:
            n = data.shape[1]
            return cls(np.zeros(n), np.ones(n), enabled=False)
        lo = data.min(axis=0)
        hi = data.max(axis=0)
        scales = hi - lo
        scales[scales <= 0.0] = 1.0  # constant coordinate: keep it unscaled
        return cls(lo, scales, enabled=True)

    @classmethod
    def identity(cls, n: int) -> "AffineScaler":
        return cls(np.zeros(n), np.ones(n), enabled=False)

    def transform(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.offsets) / self.scales

    def inverse(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=float) * self.scales + self.offsets

    def transform_one(self, index: int, value: float) -> float:
        return (float(value) - self.offsets[index]) / self.scales[index]

    def to_json(self) -> dict:
        return {
            "offsets": self.offsets.tolist(),
            "scales": self.scales.tolist(),
            "enabled": self.enabled,
        }

    @classmethod
    def from_json(cls, d: dict) -> "AffineScaler":
        return cls(np.asarray(d["offsets"], float), np.asarray(d["scales"], float), d["enabled"])


@dataclass
class MLPModel:
    """A trained ReLU network: affine layers, ReLU on hidden, affine output."""

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]  # weights[i] has shape (fan_out, fan_in)
    biases: list[np.ndarray]
    input_scaler: AffineScaler
    output_scaler: AffineScaler
    validation_mse: float | None = None
    validation_is_training: bool = False

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return self.layer_sizes[1:-1]

    def forward(self, x: Sequence[float]) -> np.ndarray:
        """Raw-space inputs to raw-space outputs for a single point."""
        return self.forward_batch(np.asarray(x, dtype=float).reshape(1, -1))[0]

    def forward_batch(self, X: np.ndarray) -> np.ndarray:
        h = self.input_scaler.transform(np.asarray(X, dtype=float))
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ W.T + b, 0.0)
        y = h @ self.weights[-1].T + self.biases[-1]
        return self.output_scaler.inverse(y)

    def hidden_activations(self, x: Sequence[float]) -> tuple[list[np.ndarray], np.ndarray]:
        """Scaled-space neuron values per hidden layer plus the scaled output.

        This is the quantity the MILP encoding's neuron variables represent,
        so it doubles as the cross-module consistency oracle.
        """
        h = self.input_scaler.transform(np.asarray(x, dtype=float))
        acts = []
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(W @ h + b, 0.0)
            acts.append(h.copy())
        y = self.weights[-1] @ h + self.biases[-1]
        return acts, y

    def to_json(self) -> dict:
        return {
            "schema_version": MODEL_SCHEMA_VERSION,
            "layer_sizes": list(self.layer_sizes),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "input_scaler": self.input_scaler.to_json(),
            "output_scaler": self.output_scaler.to_json(),
            "validation_mse": self.validation_mse,
        }

    @classmethod
    def from_json(cls, d: dict) -> "MLPModel":
        if d.get("schema_version") != MODEL_SCHEMA_VERSION:
            raise ValueError(f"unsupported model schema {d.get('schema_version')!r}")
        return cls(
            layer_sizes=tuple(d["layer_sizes"]),
            weights=[np.asarray(w, float) for w in d["weights"]],
            biases=[np.asarray(b, float) for b in d["biases"]],
            input_scaler=AffineScaler.from_json(d["input_scaler"]),
            output_scaler=AffineScaler.from_json(d["output_scaler"]),
            validation_mse=d.get("validation_mse"),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii") as f:
            json.dump(self.to_json(), f)

    @classmethod
    def load(cls, path) -> "MLPModel":
        with open(path, "r", encoding="ascii") as f:
            return cls.from_json(json.load(f))


@dataclass
class TrainConfig:
    """Adam training hyperparameters; defaults follow the fine-tuning setup."""

    learning_rate: float = 1e-4
    plateau_epochs: int = 10  # halve the lr after this many epochs without progress
    max_epochs: int = 100_000
    early_stop_patience: int = 50
    full_batch_below: int = 256
    batch_size: int = 64
    validation_fraction: float = 0.2
    # progress is measured on the training loss (the optimized quantity;
    # validation MSE wobbles through plateaus): an epoch counts as progress
    # when the loss drops below the plateau reference by rel_delta (relative)
    # or min_delta (absolute); the returned weights are still the best-
    # validation ones
    rel_delta: float = 0.01
    min_delta: float = 1e-12
    converged_loss: float = 1e-12  # training loss floor: stop immediately below it
    normalize_inputs: bool = True
    normalize_outputs: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.validation_fraction <= 0.5:
            raise ValueError("validation_fraction must be in (0, 0.5]")


def _as_arrays(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, tuple) and len(data) == 2 and not np.isscalar(data[0][0]):
        X, Y = data
    else:
        X = [p[0] for p in data]
        Y = [p[1] for p in data]
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    return X, Y


def train(data, layer_sizes: Sequence[int], config: TrainConfig) -> tuple[MLPModel, float]:
    """Train one network; deterministic given config.rng_seed.

    ``layer_sizes`` lists the hidden sizes only; input/output widths come from
    the data.  Returns the model (with best-validation weights restored) and
    its validation MSE, measured in the normalized space when output
    normalization is on.
    """
    X, Y = _as_arrays(data)
    n = X.shape[0]
    if n < 5:
        raise ValueError("training requires at least 5 samples")
    rng = np.random.default_rng(config.rng_seed)

    in_scaler = AffineScaler.fit(X, config.normalize_inputs)
    out_scaler = AffineScaler.fit(Y, config.normalize_outputs)
    Xs = in_scaler.transform(X)
    Ys = out_scaler.transform(Y)

    perm = rng.permutation(n)
    n_val = int(round(config.validation_fraction * n))
    val_is_train = n_val < 2
    if val_is_train:
        logger.warning("too few samples for a validation split; validating on training data")
        tr_idx = perm
        va_idx = perm
    else:
        va_idx = perm[:n_val]
        tr_idx = perm[n_val:]
    Xtr, Ytr = Xs[tr_idx], Ys[tr_idx]
    Xva, Yva = Xs[va_idx], Ys[va_idx]

    sizes = (X.shape[1], *tuple(int(s) for s in layer_sizes), Y.shape[1])
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, (fan_out, fan_in)))
        biases.append(np.zeros(fan_out))

    m_w = [np.zeros_like(w) for w in weights]
    v_w = [np.zeros_like(w) for w in weights]
    m_b = [np.zeros_like(b) for b in biases]
    v_b = [np.zeros_like(b) for b in biases]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    lr = config.learning_rate
    adam_t = 0

    full_batch = Xtr.shape[0] < config.full_batch_below

    def forward_cached(Xb):
        acts = [Xb]
        h = Xb
        for W, b in zip(weights[:-1], biases[:-1]):
            h = np.maximum(h @ W.T + b, 0.0)
            acts.append(h)
        acts.append(h @ weights[-1].T + biases[-1])
        return acts

    def mse_on(Xm, Ym):
        pred = forward_cached(Xm)[-1]
        return float(np.mean((pred - Ym) ** 2))

    best_val = np.inf
    best_weights = [w.copy() for w in weights]
    best_biases = [b.copy() for b in biases]
    ref_val = np.inf
    since_progress = 0

    for epoch in range(config.max_epochs):
        if full_batch:
            batches = [np.arange(Xtr.shape[0])]
        else:
            order = rng.permutation(Xtr.shape[0])
            batches = [
                order[i : i + config.batch_size]
                for i in range(0, Xtr.shape[0], config.batch_size)
            ]
        for idx in batches:
            Xb, Yb = Xtr[idx], Ytr[idx]
            acts = forward_cached(Xb)
            delta = 2.0 * (acts[-1] - Yb) / (Xb.shape[0] * Yb.shape[1])
            adam_t += 1
            grads_w, grads_b = [], []
            for li in range(len(weights) - 1, -1, -1):
                grads_w.append(delta.T @ acts[li])
                grads_b.append(delta.sum(axis=0))
                if li > 0:
                    delta = (delta @ weights[li]) * (acts[li] > 0)
            grads_w.reverse()
            grads_b.reverse()
            bc1 = 1.0 - beta1**adam_t
            bc2 = 1.0 - beta2**adam_t
            for li in range(len(weights)):
                m_w[li] = beta1 * m_w[li] + (1 - beta1) * grads_w[li]
                v_w[li] = beta2 * v_w[li] + (1 - beta2) * grads_w[li] ** 2
                weights[li] -= lr * (m_w[li] / bc1) / (np.sqrt(v_w[li] / bc2) + eps)
                m_b[li] = beta1 * m_b[li] + (1 - beta1) * grads_b[li]
                v_b[li] = beta2 * v_b[li] + (1 - beta2) * grads_b[li] ** 2
                biases[li] -= lr * (m_b[li] / bc1) / (np.sqrt(v_b[li] / bc2) + eps)

        if not all(np.all(np.isfinite(w)) for w in weights):
            logger.warning("non-finite weights at epoch %d; reverting to best", epoch)
            break
        mse = mse_on(Xva, Yva)
        if mse < best_val:
            best_val = mse
            best_weights = [w.copy() for w in weights]
            best_biases = [b.copy() for b in biases]
        loss = mse_on(Xtr, Ytr)
        if loss < config.converged_loss:
            break
        if not np.isfinite(ref_val) or loss < ref_val - max(
            config.min_delta, config.rel_delta * ref_val
        ):
            ref_val = loss
            since_progress = 0
        else:
            since_progress += 1
            if since_progress % config.plateau_epochs == 0:
                lr *= 0.5
            if since_progress >= config.early_stop_patience:
                break

    model = MLPModel(
        layer_sizes=sizes,
        weights=best_weights,
        biases=best_biases,
        input_scaler=in_scaler,
        output_scaler=out_scaler,
        validation_mse=best_val,
        validation_is_training=val_is_train,
    )
    return model, best_val


def select_architecture(
    library: Sequence[Sequence[int]], data, config: TrainConfig
) -> MLPModel:
    """Train every candidate and keep the least validation MSE (ties: earlier entry)."""
    if not library:
        raise ValueError("architecture library is empty")
    best_model = None
    best_val = np.inf
    for sizes in library:
        model, val = train(data, sizes, config)
        if val < best_val:
            best_val = val
            best_model = model
    return best_model


class MLPSurrogate(BaseEstimator, RegressorMixin):
    """scikit-learn estimator facade over :func:`train`.

    Parameters mirror TrainConfig; fitted attributes are ``model_`` (the
    underlying :class:`MLPModel`) and ``validation_mse_``.
    """

    def __init__(
        self,
        hidden_layer_sizes=(50,),
        learning_rate=1e-4,
        max_epochs=100_000,
        early_stop_patience=50,
        validation_fraction=0.2,
        normalize_inputs=True,
        normalize_outputs=True,
        random_state=0,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.early_stop_patience = early_stop_patience
        self.validation_fraction = validation_fraction
        self.normalize_inputs = normalize_inputs
        self.normalize_outputs = normalize_outputs
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        self._y_was_1d = y.ndim == 1
        config = TrainConfig(
            learning_rate=self.learning_rate,
            max_epochs=self.max_epochs,
            early_stop_patience=self.early_stop_patience,
            validation_fraction=self.validation_fraction,
            normalize_inputs=self.normalize_inputs,
            normalize_outputs=self.normalize_outputs,
            rng_seed=self.random_state,
        )
        self.model_, self.validation_mse_ = train((X, y), self.hidden_layer_sizes, config)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        pred = self.model_.forward_batch(X)
        return pred.ravel() if self._y_was_1d else pred
