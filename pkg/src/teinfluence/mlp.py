"""Multilayer perceptron with a Gaussian emission head.

The network maps a flattened observation/action window to the mean and
standard deviation of the next observation.  Hidden layers use ReLU; the
output layer has two units, the mean (identity) and a pre-spread value mapped
through softplus plus a floor ``sigma_min``.

Parameters live in a single flat float64 vector; per-layer weight matrices
and bias vectors are views into it, which keeps Adam and gradient checks
simple.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .data import InputEncoding, MaskSpec, WindowSample, atomic_write_text
from .errors import (
    CheckpointError,
    InvalidArgumentError,
    InvalidStateError,
    TrainingDivergedError,
)

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
CHECKPOINT_FORMAT = "teinfluence-gaussian-mlp"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class GaussianPrediction:
    mean: float
    std: float


def softplus(x):
    return np.logaddexp(0.0, x)


class GaussianMLP:
    def __init__(self, layer_dims: Sequence[int], params=None, sigma_min: float = 1e-4, metadata=None):
        dims = [int(d) for d in layer_dims]
        if len(dims) < 2 or dims[-1] != 2 or min(dims) < 1:
            raise InvalidArgumentError(f"bad layer dims {dims}; output layer must have 2 units")
        if not sigma_min > 0:
            raise InvalidArgumentError("sigma_min must be positive")
        self.layer_dims = tuple(dims)
        self.sigma_min = float(sigma_min)
        self.metadata = dict(metadata or {})
        n = sum(o * i + o for i, o in zip(dims[:-1], dims[1:]))
        if params is None:
            params = np.zeros(n)
        params = np.array(params, dtype=np.float64)
        if params.shape != (n,):
            raise InvalidArgumentError(f"expected {n} parameters, got {params.shape}")
        self.params = params
        self.layers = self._views(self.params)

    def _views(self, flat: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        out, k = [], 0
        for i, o in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            W = flat[k : k + o * i].reshape(o, i)
            k += o * i
            b = flat[k : k + o]
            k += o
            out.append((W, b))
        return out

    @classmethod
    def initialize(cls, layer_dims: Sequence[int], rng: np.random.Generator, sigma_min: float = 1e-4) -> "GaussianMLP":
        """Uniform fan-in initialization, ``W ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))``, zero biases."""
        model = cls(layer_dims, sigma_min=sigma_min)
        for W, _ in model.layers:
            bound = 1.0 / math.sqrt(W.shape[1])
            W[...] = rng.uniform(-bound, bound, size=W.shape)
        return model

    @property
    def input_size(self) -> int:
        return self.layer_dims[0]

    def copy(self) -> "GaussianMLP":
        return GaussianMLP(self.layer_dims, self.params.copy(), self.sigma_min, self.metadata)

    def _check_input(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.input_size:
            raise InvalidArgumentError(f"input has {X.shape[-1]} features, model expects {self.input_size}")
        return X

    def _forward(self, X: np.ndarray):
        acts = [X]
        h = X
        for W, b in self.layers[:-1]:
            h = np.maximum(h @ W.T + b, 0.0)
            acts.append(h)
        W, b = self.layers[-1]
        out = h @ W.T + b
        return out[:, 0], out[:, 1], acts

    def predict(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Batched means and standard deviations for the rows of ``X``."""
        X = self._check_input(X)
        if X.ndim == 1:
            X = X[None, :]
        mean, raw, _ = self._forward(X)
        return mean, softplus(raw) + self.sigma_min

    def loss_and_grad(self, X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
        """Mean NLL over the batch and its gradient w.r.t. the flat parameter vector."""
        X = self._check_input(X)
        n = X.shape[0]
        mean, raw, acts = self._forward(X)
        std = softplus(raw) + self.sigma_min
        r = y - mean
        inv_var = 1.0 / (std * std)
        loss = HALF_LOG_2PI + np.log(std) + 0.5 * r * r * inv_var
        d_mean = -r * inv_var
        d_std = 1.0 / std - r * r * inv_var / std
        d_out = np.column_stack([d_mean, d_std * expit(raw)]) / n

        grad = np.empty_like(self.params)
        gviews = self._views(grad)
        delta = d_out
        for li in range(len(self.layers) - 1, -1, -1):
            W, _ = self.layers[li]
            gW, gb = gviews[li]
            h = acts[li]
            gW[...] = delta.T @ h
            gb[...] = delta.sum(axis=0)
            if li:
                delta = (delta @ W) * (h > 0.0)
        return float(loss.mean()), grad

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "layer_dims": list(self.layer_dims),
            "sigma_min": self.sigma_min,
            "weights": [W.tolist() for W, _ in self.layers],
            "biases": [b.tolist() for _, b in self.layers],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianMLP":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError("not a Gaussian MLP checkpoint")
        if d.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {d.get('version')!r}")
        try:
            model = cls(d["layer_dims"], sigma_min=d["sigma_min"], metadata=d.get("metadata"))
            if len(d["weights"]) != len(model.layers) or len(d["biases"]) != len(model.layers):
                raise CheckpointError("layer count does not match layer_dims")
            for (W, b), w_in, b_in in zip(model.layers, d["weights"], d["biases"]):
                w_arr = np.array(w_in, dtype=np.float64)
                b_arr = np.array(b_in, dtype=np.float64)
                if w_arr.shape != W.shape or b_arr.shape != b.shape:
                    raise CheckpointError("weight shapes do not match layer_dims")
                W[...] = w_arr
                b[...] = b_arr
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, CheckpointError):
                raise
            raise CheckpointError(f"malformed checkpoint: {exc}") from None
        if not np.all(np.isfinite(model.params)):
            raise CheckpointError("checkpoint contains non-finite parameters")
        return model


def forward(model: GaussianMLP, x) -> GaussianPrediction:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidArgumentError("forward takes a single flat input vector")
    mean, std = model.predict(x)
    return GaussianPrediction(float(mean[0]), float(std[0]))


def nll_loss(pred: GaussianPrediction, target: float) -> float:
    """Gaussian negative log-likelihood in nats."""
    if not pred.std > 0:
        raise InvalidStateError(f"standard deviation must be positive, got {pred.std}")
    z = (target - pred.mean) / pred.std
    return HALF_LOG_2PI + math.log(pred.std) + 0.5 * z * z


def backward(model: GaussianMLP, x, target: float) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-layer ``(dW, db)`` gradients of the NLL for a single example."""
    x = np.asarray(x, dtype=np.float64)
    _, grad = model.loss_and_grad(x[None, :], np.array([float(target)]))
    return [(gW.copy(), gb.copy()) for gW, gb in model._views(grad)]


# --- training ----------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 3e-3
    mask_probability: float = 0.5
    rng_seed: int = 0
    patience: int = 40  # epochs without improvement before stopping; 0 disables
    validation_fraction: float = 0.1
    hidden_sizes: tuple[int, ...] = (32, 16)
    sigma_min: float = 1e-4
    weight_decay: float = 0.0
    ema_decay: float = 0.99  # per-step weight averaging; 0 evaluates raw weights
    mask_indicator: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError("epochs and batch_size must be positive")
        if not self.learning_rate > 0:
            raise InvalidArgumentError("learning_rate must be positive")
        if not 0.0 <= self.mask_probability <= 1.0:
            raise InvalidArgumentError("mask_probability must lie in [0, 1]")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise InvalidArgumentError("validation_fraction must lie in [0, 1)")
        if self.weight_decay < 0:
            raise InvalidArgumentError("weight_decay must be non-negative")
        if not 0.0 <= self.ema_decay < 1.0:
            raise InvalidArgumentError("ema_decay must lie in [0, 1)")
        if self.patience < 0:
            raise InvalidArgumentError("patience must be non-negative")


class Adam:
    """Adam with optional decoupled weight decay applied to ``decay_mask`` entries."""

    def __init__(self, n: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0, decay_mask=None):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.decay_mask = np.ones(n) if decay_mask is None else np.asarray(decay_mask, dtype=np.float64)
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        if self.weight_decay:
            params -= (self.lr * self.weight_decay) * self.decay_mask * params
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def mean_nll(model: GaussianMLP, X: np.ndarray, y: np.ndarray) -> float:
    mean, std = model.predict(X)
    z = (y - mean) / std
    return float(np.mean(HALF_LOG_2PI + np.log(std) + 0.5 * z * z))


def fit_arrays(
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_val: np.ndarray,
    y_val: np.ndarray,
    encoding: InputEncoding,
    mask: MaskSpec,
    cfg: TrainConfig,
) -> GaussianMLP:
    """Train on encoded, unmasked inputs.

    Each epoch every training row is masked independently with probability
    ``cfg.mask_probability``.  Validation NLL is the same mixture evaluated
    deterministically: ``(1-p)·NLL(unmasked) + p·NLL(masked)``.  The returned
    model is the one with the best validation NLL (training NLL when there is
    no validation data).
    """
    n = X_train.shape[0]
    if n == 0:
        raise InvalidArgumentError("no training samples")
    if X_train.shape[1] != encoding.size:
        raise InvalidArgumentError("training inputs do not match the input encoding")
    rng = np.random.default_rng(cfg.rng_seed)
    dims = (encoding.size, *cfg.hidden_sizes, 2)
    model = GaussianMLP.initialize(dims, rng, cfg.sigma_min)
    decay = np.zeros(model.params.size)
    for W, _ in model._views(decay):
        W[...] = 1.0
    opt = Adam(model.params.size, cfg.learning_rate, weight_decay=cfg.weight_decay, decay_mask=decay)
    p = cfg.mask_probability
    has_val = X_val.shape[0] > 0
    if has_val:
        X_val_masked = encoding.apply_mask(X_val, mask)

    ema = model.params.copy()
    shadow = GaussianMLP(dims, ema, cfg.sigma_min)
    best_score, best_params, best_epoch, stale = math.inf, model.params.copy(), -1, 0
    train_hist, val_hist = [], []
    for epoch in range(cfg.epochs):
        Xe = encoding.apply_mask(X_train, mask, rows=rng.random(n) < p)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grad = model.loss_and_grad(Xe[idx], y_train[idx])
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                raise TrainingDivergedError(epoch)
            total += loss * idx.size
            opt.step(model.params, grad)
            if cfg.ema_decay:
                ema *= cfg.ema_decay
                ema += (1.0 - cfg.ema_decay) * model.params
        train_nll = total / n
        train_hist.append(train_nll)
        # the shadow model holds its own copy of the parameters
        shadow.params[...] = ema
        evaluated = shadow if cfg.ema_decay else model
        if has_val:
            score = (1.0 - p) * mean_nll(evaluated, X_val, y_val) + p * mean_nll(evaluated, X_val_masked, y_val)
        else:
            score = train_nll
        if not math.isfinite(score):
            raise TrainingDivergedError(epoch, "non-finite validation loss")
        val_hist.append(score)
        if score < best_score:
            best_score, best_params, best_epoch, stale = score, evaluated.params.copy(), epoch, 0
        else:
            stale += 1
            if cfg.patience > 0 and stale >= cfg.patience:
                break

    best = GaussianMLP(dims, best_params, cfg.sigma_min)
    best.metadata["encoding"] = encoding.to_dict()
    best.metadata["mask"] = {"masked_frames": list(mask.masked_frames), "mask_value": mask.mask_value}
    best.metadata["training"] = {
        "epochs_run": len(train_hist),
        "best_epoch": best_epoch,
        "best_validation_nll": best_score,
        "train_nll": train_hist,
        "validation_nll": val_hist,
    }
    return best


def split_train_validation(n: int, fraction: float) -> int:
    """Index where the held-out tail begins; the final ``fraction`` of rows in time order."""
    n_val = int(math.floor(n * fraction))
    return n - n_val


def train(samples: Sequence[WindowSample], mask: MaskSpec, cfg: TrainConfig = TrainConfig()) -> GaussianMLP:
    """Train one model shared by the masked and unmasked predictions."""
    if not samples:
        raise InvalidArgumentError("cannot train on an empty sample set")
    return train_pooled([samples], mask, cfg)


def train_pooled(sample_sets: Sequence[Sequence[WindowSample]], mask: MaskSpec, cfg: TrainConfig = TrainConfig()) -> GaussianMLP:
    """Train on several trajectories; each one contributes its own time-ordered validation tail."""
    sets = [s for s in sample_sets if len(s)]
    if not sets:
        raise InvalidArgumentError("cannot train on an empty sample set")
    encoding = InputEncoding.for_samples(sets[0], cfg.mask_indicator)
    mask.check(encoding.window_len)
    parts = {"Xt": [], "yt": [], "Xv": [], "yv": []}
    for samples in sets:
        if InputEncoding.for_samples(samples, cfg.mask_indicator) != encoding:
            raise InvalidArgumentError("trajectories disagree on window shape or channel count")
        X = encoding.encode(samples)
        y = np.array([s.target for s in samples], dtype=np.float64)
        cut = split_train_validation(len(samples), cfg.validation_fraction)
        parts["Xt"].append(X[:cut])
        parts["yt"].append(y[:cut])
        parts["Xv"].append(X[cut:])
        parts["yv"].append(y[cut:])
    cat = {k: np.concatenate(v) for k, v in parts.items()}
    return fit_arrays(cat["Xt"], cat["yt"], cat["Xv"], cat["yv"], encoding, mask, cfg)


def model_encoding(model: GaussianMLP, window_len: int, n_obs: int, n_act: int) -> InputEncoding:
    """Input encoding a model was trained with.

    Taken from checkpoint metadata when present, otherwise inferred from the
    input width.
    """
    meta = model.metadata.get("encoding")
    if meta is not None:
        enc = InputEncoding.from_dict(meta)
        if (enc.window_len, enc.n_obs, enc.n_act) != (window_len, n_obs, n_act):
            raise CheckpointError(
                f"model was trained on windows of {enc.window_len}x({enc.n_obs}+{enc.n_act}), "
                f"data has {window_len}x({n_obs}+{n_act})"
            )
    else:
        enc = None
        for flag in (False, True):
            cand = InputEncoding(window_len, n_obs, n_act, flag)
            if cand.size == model.input_size:
                enc = cand
        if enc is None:
            raise CheckpointError(f"model input size {model.input_size} does not fit the data windows")
    if enc.size != model.input_size:
        raise CheckpointError(f"model input size {model.input_size} does not match its encoding ({enc.size})")
    return enc


# --- checkpoints ---------------------------------------------------------------


def checkpoint_text(model: GaussianMLP) -> str:
    return json.dumps(model.to_dict(), indent=1, sort_keys=True) + "\n"


def save_checkpoint(path, model: GaussianMLP) -> None:
    atomic_write_text(path, checkpoint_text(model))


def load_checkpoint(path, expected_input_size: int | None = None) -> GaussianMLP:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: cannot parse checkpoint ({exc})") from None
    if not isinstance(d, dict):
        raise CheckpointError(f"{path}: checkpoint is not a JSON object")
    model = GaussianMLP.from_dict(d)
    if expected_input_size is not None and model.input_size != expected_input_size:
        raise CheckpointError(
            f"{path}: checkpoint input size {model.input_size} does not match data input size {expected_input_size}"
        )
    return model
