"""From-scratch fully connected regression network.

The baseline learner: hidden layers {256,128,64,32,16} with ReLU, one
linear output neuron, MSE loss, Xavier-normal initialization, Adam updates,
and early stopping on a 90:10 train/validation split. Inputs are
standardized per feature with statistics taken from the training portion
and stored with the model.
"""

from __future__ import annotations

import base64
import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .hashing import sha256_of_json

SCHEMA_VERSION = 1

DEFAULT_HIDDEN = (256, 128, 64, 32, 16)


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class MlpArchitecture:
    """Layer sizes from input to the single linear output."""

    layer_sizes: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least input and output layers")
        if any(s < 1 for s in self.layer_sizes):
            raise ValueError("all layer sizes must be >= 1")
        if self.layer_sizes[-1] != 1:
            raise ValueError("output layer must have exactly 1 neuron")

    @classmethod
    def default(cls, input_dim: int) -> "MlpArchitecture":
        return cls((input_dim, *DEFAULT_HIDDEN, 1))


@dataclass
class MlpParams:
    weights: list[np.ndarray]  # per layer, shape (out, in)
    biases: list[np.ndarray]   # per layer, shape (out,)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 500
    val_fraction: float = 0.1
    patience: int = 20
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    improve_tol: float = 1e-7   # val MSE must drop by more than this to count
    seed: int = 0

    def __post_init__(self) -> None:
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("max_epochs and batch_size must be >= 1")


def init_params(arch: MlpArchitecture, seed: int) -> MlpParams:
    """Xavier-normal weights (variance 2/(fan_in+fan_out)), zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(arch.layer_sizes[:-1], arch.layer_sizes[1:]):
        std = math.sqrt(2.0 / (fan_in + fan_out))
        weights.append(rng.normal(0.0, std, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def forward_batch(params: MlpParams, X: np.ndarray) -> np.ndarray:
    """Predictions for a batch, shape (n,)."""
    a = X
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        a = a @ W.T + b
        if i < last:
            a = np.maximum(a, 0.0)
    return a[:, 0]


def forward(params: MlpParams, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.weights[0].shape[1],):
        raise ValueError(
            f"input has shape {x.shape}, network expects ({params.weights[0].shape[1]},)"
        )
    return float(forward_batch(params, x[None, :])[0])


def mse_and_grad(params: MlpParams, X: np.ndarray, y: np.ndarray
                 ) -> tuple[float, MlpParams]:
    """Exact reverse-mode gradient of the batch MSE.

    ReLU uses the 0 subgradient at its kink. Returns (loss, grads) where
    grads has the same shapes as the parameters.
    """
    if len(y) == 0:
        raise ValueError("empty batch")
    m = len(y)
    acts = [X]               # post-activation per layer, acts[0] = input
    pre: list[np.ndarray] = []
    a = X
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ W.T + b
        pre.append(z)
        a = np.maximum(z, 0.0) if i < last else z
        acts.append(a)
    out = acts[-1][:, 0]
    err = out - y
    loss = float((err * err).mean())

    gw = [np.empty_like(W) for W in params.weights]
    gb = [np.empty_like(b) for b in params.biases]
    delta = (2.0 / m) * err[:, None]          # dL/d(pre-activation of output)
    for i in range(last, -1, -1):
        gw[i] = delta.T @ acts[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i]) * (pre[i - 1] > 0.0)
    return loss, MlpParams(gw, gb)


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Normalizer":
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        return cls(mean, np.where(std > 0.0, std, 1.0))

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.std


@dataclass
class MlpModel:
    """Trained network plus everything needed to use it on raw scans."""

    arch: MlpArchitecture
    params: MlpParams
    normalizer: Normalizer
    train_config: TrainConfig
    history: dict = field(default_factory=dict)
    dataset_meta: dict = field(default_factory=dict)

    def predict(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        return forward(self.params, self.normalizer.apply(x))

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        return forward_batch(self.params, self.normalizer.apply(np.asarray(X)))


def train(
    X: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    arch: Optional[MlpArchitecture] = None,
    dataset_meta: Optional[dict] = None,
) -> MlpModel:
    """Mini-batch Adam with early stopping; returns the best-validation model."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if n < 2:
        raise ValueError("need at least 2 samples to hold out a validation split")
    if arch is None:
        arch = MlpArchitecture.default(X.shape[1])

    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    n_train = math.ceil((1.0 - cfg.val_fraction) * n)
    tr, va = perm[:n_train], perm[n_train:]
    if len(va) == 0:
        raise ValueError(f"dataset of {n} rows leaves an empty validation split")

    norm = Normalizer.fit(X[tr])
    Xtr, ytr = norm.apply(X[tr]), y[tr]
    Xva, yva = norm.apply(X[va]), y[va]

    params = init_params(arch, seed=cfg.seed)
    m_w = [np.zeros_like(w) for w in params.weights]
    v_w = [np.zeros_like(w) for w in params.weights]
    m_b = [np.zeros_like(b) for b in params.biases]
    v_b = [np.zeros_like(b) for b in params.biases]

    best_val = math.inf
    best_params = params.copy()
    best_epoch = -1
    bad_epochs = 0
    val_curve: list[float] = []
    train_curve: list[float] = []
    t = 0

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(ytr))
        epoch_loss = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            sel = order[lo:lo + cfg.batch_size]
            loss, g = mse_and_grad(params, Xtr[sel], ytr[sel])
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            epoch_loss += loss * len(sel)
            t += 1
            bc1 = 1.0 - cfg.beta1 ** t
            bc2 = 1.0 - cfg.beta2 ** t
            for i in range(len(params.weights)):
                for p, gr, mm, vv in (
                    (params.weights[i], g.weights[i], m_w[i], v_w[i]),
                    (params.biases[i], g.biases[i], m_b[i], v_b[i]),
                ):
                    mm *= cfg.beta1
                    mm += (1.0 - cfg.beta1) * gr
                    vv *= cfg.beta2
                    vv += (1.0 - cfg.beta2) * gr * gr
                    p -= cfg.learning_rate * (mm / bc1) / (np.sqrt(vv / bc2) + cfg.adam_eps)
        train_curve.append(epoch_loss / len(ytr))

        val_err = forward_batch(params, Xva) - yva
        val_mse = float((val_err * val_err).mean())
        if not math.isfinite(val_mse):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        val_curve.append(val_mse)

        if val_mse < best_val - cfg.improve_tol:
            best_val = val_mse
            best_params = params.copy()
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break

    history = {
        "val_mse": val_curve,
        "train_mse": train_curve,
        "best_epoch": best_epoch,
        "best_val_mse": best_val,
        "epochs_run": len(val_curve),
        "n_train": int(len(tr)),
        "n_val": int(len(va)),
    }
    return MlpModel(arch=arch, params=best_params, normalizer=norm,
                    train_config=cfg, history=history,
                    dataset_meta=dict(dataset_meta or {}))


# ---------------------------------------------------------------------------
# serialization: JSON header + base64 little-endian float64 blobs,
# ordered layer by layer as (weights row-major, then biases)

def _encode_array(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode()


def _decode_array(s: str, shape: tuple[int, ...]) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s), dtype="<f8").reshape(shape).copy()


def save_mlp(model: MlpModel, path) -> None:
    cfg = model.train_config
    obj = {
        "schema_version": SCHEMA_VERSION,
        "kind": "mlp",
        "layer_sizes": list(model.arch.layer_sizes),
        "normalization": {
            "mean": model.normalizer.mean.tolist(),
            "std": model.normalizer.std.tolist(),
        },
        "train_config": {
            "max_epochs": cfg.max_epochs, "val_fraction": cfg.val_fraction,
            "patience": cfg.patience, "batch_size": cfg.batch_size,
            "learning_rate": cfg.learning_rate, "beta1": cfg.beta1,
            "beta2": cfg.beta2, "adam_eps": cfg.adam_eps,
            "improve_tol": cfg.improve_tol, "seed": cfg.seed,
        },
        "history": model.history,
        "dataset_meta": model.dataset_meta,
        "dataset_meta_hash": sha256_of_json(model.dataset_meta),
        "layers": [
            {"weights": _encode_array(W), "biases": _encode_array(b)}
            for W, b in zip(model.params.weights, model.params.biases)
        ],
    }
    Path(path).write_text(json.dumps(obj))


def load_mlp(path, expected_beam_count: Optional[int] = None) -> MlpModel:
    obj = json.loads(Path(path).read_text())
    if obj.get("schema_version") != SCHEMA_VERSION or obj.get("kind") != "mlp":
        raise ValueError(f"{path}: not a schema v{SCHEMA_VERSION} mlp file")
    sizes = tuple(obj["layer_sizes"])
    if expected_beam_count is not None and sizes[0] != expected_beam_count:
        raise ValueError(
            f"{path}: model expects {sizes[0]} beams, sensor has {expected_beam_count}"
        )
    arch = MlpArchitecture(sizes)
    weights, biases = [], []
    for (fan_in, fan_out), layer in zip(
        zip(sizes[:-1], sizes[1:]), obj["layers"]
    ):
        weights.append(_decode_array(layer["weights"], (fan_out, fan_in)))
        biases.append(_decode_array(layer["biases"], (fan_out,)))
    norm = Normalizer(
        mean=np.asarray(obj["normalization"]["mean"], dtype=np.float64),
        std=np.asarray(obj["normalization"]["std"], dtype=np.float64),
    )
    return MlpModel(
        arch=arch,
        params=MlpParams(weights, biases),
        normalizer=norm,
        train_config=TrainConfig(**obj["train_config"]),
        history=obj.get("history", {}),
        dataset_meta=obj.get("dataset_meta", {}),
    )
