"""Minimal deterministic feedforward learner with hand-derived gradients.

A small dense network (optionally fronted by a single stride-1 valid
convolution) with softmax cross-entropy and plain minibatch SGD, float64
throughout. The same engine is used both as the rotation-prediction model
and as the main image classifier, so everything here is deterministic
under a fixed seed: weight init, shuffling, and updates.

Inference functions are pure; they may be called concurrently as long as
results are collected in sample order.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .seeds import derive_seed

CHECKPOINT_MAGIC = "PT4AL-CKPT"
CHECKPOINT_VERSION = 1

_ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class ConvSpec:
    """Single convolution layer: `filters` kernels of size kernel x kernel."""

    filters: int
    kernel: int


@dataclass(frozen=True)
class LearnerConfig:
    """Architecture plus training hyperparameters.

    `input_shape` and `n_classes` default to unset so configs can be
    declared before the dataset is known and materialized later with
    `dataclasses.replace`.
    """

    input_shape: tuple[int, ...] = ()
    n_classes: int = 0
    hidden: tuple[int, ...] = (128, 64)
    conv: ConvSpec | None = None
    activation: str = "tanh"
    learning_rate: float = 0.1
    decay_milestones: tuple[float, ...] = (0.5, 0.75)
    decay_factor: float = 0.1
    epochs: int = 20
    batch_size: int = 32
    init_scale: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if not self.input_shape or any(int(d) <= 0 for d in self.input_shape):
            raise ValueError(f"input_shape must have positive dims, got {self.input_shape!r}")
        if self.n_classes < 2:
            raise ValueError(f"need at least 2 output classes, got {self.n_classes}")
        if any(int(h) <= 0 for h in self.hidden):
            raise ValueError(f"hidden widths must be positive, got {self.hidden!r}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        if self.decay_factor <= 0:
            raise ValueError("decay factor must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.conv is not None:
            if len(self.input_shape) != 3:
                raise ValueError("conv layer requires an (H, W, C) input shape")
            h, w, _ = self.input_shape
            if self.conv.filters < 1:
                raise ValueError("conv filters must be >= 1")
            if not 1 <= self.conv.kernel <= min(h, w):
                raise ValueError(f"conv kernel {self.conv.kernel} does not fit input {self.input_shape}")

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.input_shape))

    @property
    def feature_dim(self) -> int:
        """Width of the first dense layer's input."""
        if self.conv is None:
            return self.input_dim
        h, w, _ = self.input_shape
        k = self.conv.kernel
        return (h - k + 1) * (w - k + 1) * self.conv.filters


@dataclass
class LearnerState:
    """Weights and biases per layer plus the config snapshot that shaped them."""

    config: LearnerConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "LearnerState":
        return LearnerState(self.config, [w.copy() for w in self.weights], [b.copy() for b in self.biases])


def param_shapes(config: LearnerConfig) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """(weight shape, bias shape) per layer, conv layer first when present."""
    shapes: list[tuple[tuple[int, ...], tuple[int, ...]]] = []
    if config.conv is not None:
        _, _, c = config.input_shape
        k, f = config.conv.kernel, config.conv.filters
        shapes.append(((k, k, c, f), (f,)))
    dims = [config.feature_dim, *config.hidden, config.n_classes]
    for din, dout in zip(dims[:-1], dims[1:]):
        shapes.append(((din, dout), (dout,)))
    return shapes


def n_parameters(config: LearnerConfig) -> int:
    return sum(int(np.prod(ws)) + int(np.prod(bs)) for ws, bs in param_shapes(config))


def init_learner(config: LearnerConfig) -> LearnerState:
    """Fresh state with scaled-Gaussian weights and zero biases.

    Weights are drawn as init_scale / sqrt(fan_in) * N(0, 1) from a
    generator seeded with config.seed, so identical configs produce
    bit-identical states. init_scale 0 gives an all-zero network whose
    softmax output is uniform.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    weights: list[np.ndarray] = []
    biases: list[np.ndarray] = []
    for wshape, bshape in param_shapes(config):
        fan_in = int(np.prod(wshape[:-1]))
        weights.append(rng.standard_normal(wshape) * (config.init_scale / math.sqrt(fan_in)))
        biases.append(np.zeros(bshape))
    return LearnerState(config=config, weights=weights, biases=biases)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _act(z: np.ndarray, kind: str) -> np.ndarray:
    return np.tanh(z) if kind == "tanh" else np.maximum(z, 0.0)


def _act_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - a * a
    return (z > 0.0).astype(np.float64)


def as_batch(config: LearnerConfig, x) -> np.ndarray:
    """Canonicalize a batch to (B, *input_shape) float64, accepting flat rows."""
    arr = np.asarray(x, dtype=np.float64)
    want = tuple(config.input_shape)
    if arr.ndim == len(want) + 1 and arr.shape[1:] == want:
        return arr
    if arr.ndim == 2 and arr.shape[1] == config.input_dim:
        return arr.reshape(arr.shape[0], *want)
    if len(want) == 3 and want[2] == 1 and arr.ndim == 3 and arr.shape[1:] == want[:2]:
        return arr[..., None]
    raise ValueError(f"input shape mismatch: got {arr.shape}, expected batch of {want}")


def _single_to_batch(config: LearnerConfig, x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    want = tuple(config.input_shape)
    if arr.shape == want:
        return arr[None]
    if arr.ndim == 1 and arr.size == config.input_dim:
        return arr.reshape(1, *want)
    if len(want) == 3 and want[2] == 1 and arr.shape == want[:2]:
        return arr[None, ..., None]
    raise ValueError(f"input shape mismatch: got {arr.shape}, expected {want}")


def _as_labels(config: LearnerConfig, y, n: int) -> np.ndarray:
    arr = np.asarray(y)
    if arr.ndim != 1 or len(arr) != n:
        raise ValueError(f"labels must be a length-{n} vector, got shape {arr.shape}")
    arr = arr.astype(np.int64)
    if arr.min(initial=0) < 0 or (len(arr) and arr.max() >= config.n_classes):
        raise ValueError(f"labels must lie in [0, {config.n_classes})")
    return arr


def _forward(state: LearnerState, xb: np.ndarray):
    cfg = state.config
    cache: dict = {}
    offset = 0
    if cfg.conv is not None:
        k = cfg.conv.kernel
        h, w, _ = cfg.input_shape
        ho, wo = h - k + 1, w - k + 1
        kern = state.weights[0]
        z = np.zeros((len(xb), ho, wo, cfg.conv.filters)) + state.biases[0]
        for di in range(k):
            for dj in range(k):
                z += xb[:, di:di + ho, dj:dj + wo, :] @ kern[di, dj]
        a = _act(z, cfg.activation)
        cache["conv_x"], cache["conv_z"], cache["conv_a"] = xb, z, a
        h0 = a.reshape(len(xb), -1)
        offset = 1
    else:
        h0 = xb.reshape(len(xb), -1)
    acts = [h0]
    zs = []
    for j in range(len(cfg.hidden)):
        z = acts[-1] @ state.weights[offset + j] + state.biases[offset + j]
        zs.append(z)
        acts.append(_act(z, cfg.activation))
    logits = acts[-1] @ state.weights[-1] + state.biases[-1]
    cache["acts"], cache["zs"], cache["offset"] = acts, zs, offset
    return logits, cache


def predict_logits(state: LearnerState, xs) -> np.ndarray:
    logits, _ = _forward(state, as_batch(state.config, xs))
    return logits


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _logsumexp(logits: np.ndarray) -> np.ndarray:
    zmax = logits.max(axis=1)
    return zmax + np.log(np.exp(logits - zmax[:, None]).sum(axis=1))


def predict_proba(state: LearnerState, x) -> np.ndarray:
    """Class-probability vector for a single input; entries sum to 1."""
    logits, _ = _forward(state, _single_to_batch(state.config, x))
    return _softmax(logits)[0]


def predict_proba_batch(state: LearnerState, xs) -> np.ndarray:
    return _softmax(predict_logits(state, xs))


def per_sample_loss(state: LearnerState, x, y: int) -> float:
    """Cross-entropy -log p_y for one input; always >= 0."""
    if not 0 <= int(y) < state.config.n_classes:
        raise ValueError(f"label {y} outside [0, {state.config.n_classes})")
    logits, _ = _forward(state, _single_to_batch(state.config, x))
    return float(_logsumexp(logits)[0] - logits[0, int(y)])


def per_sample_losses(state: LearnerState, xs, ys) -> np.ndarray:
    """Vectorized -log p_y per row, computed with the stable log-sum-exp form."""
    xb = as_batch(state.config, xs)
    yb = _as_labels(state.config, ys, len(xb))
    logits, _ = _forward(state, xb)
    return _logsumexp(logits) - logits[np.arange(len(xb)), yb]


def accuracy(state: LearnerState, xs, ys) -> float:
    xb = as_batch(state.config, xs)
    yb = _as_labels(state.config, ys, len(xb))
    preds = predict_logits(state, xb).argmax(axis=1)
    return float(np.mean(preds == yb))


def loss_and_grad(state: LearnerState, x, y):
    """Mean minibatch cross-entropy and its analytic gradient.

    Returns (loss, grad_weights, grad_biases) with the gradient lists
    mirroring state.weights / state.biases layer for layer.
    """
    cfg = state.config
    xb = as_batch(cfg, x)
    if len(xb) == 0:
        raise ValueError("empty minibatch")
    yb = _as_labels(cfg, y, len(xb))
    logits, cache = _forward(state, xb)
    lse = _logsumexp(logits)
    rows = np.arange(len(xb))
    loss = float(np.mean(lse - logits[rows, yb]))

    delta = np.exp(logits - lse[:, None])
    delta[rows, yb] -= 1.0
    delta /= len(xb)

    gws: list = [None] * len(state.weights)
    gbs: list = [None] * len(state.biases)
    acts, zs, offset = cache["acts"], cache["zs"], cache["offset"]
    gws[-1] = acts[-1].T @ delta
    gbs[-1] = delta.sum(axis=0)
    dh = delta @ state.weights[-1].T
    for j in range(len(cfg.hidden) - 1, -1, -1):
        dz = dh * _act_grad(zs[j], acts[j + 1], cfg.activation)
        gws[offset + j] = acts[j].T @ dz
        gbs[offset + j] = dz.sum(axis=0)
        dh = dz @ state.weights[offset + j].T
    if cfg.conv is not None:
        k = cfg.conv.kernel
        h, w, _ = cfg.input_shape
        ho, wo = h - k + 1, w - k + 1
        da = dh.reshape(len(xb), ho, wo, cfg.conv.filters)
        dz = da * _act_grad(cache["conv_z"], cache["conv_a"], cfg.activation)
        gk = np.zeros_like(state.weights[0])
        xc = cache["conv_x"]
        for di in range(k):
            for dj in range(k):
                gk[di, dj] = np.tensordot(xc[:, di:di + ho, dj:dj + wo, :], dz, axes=([0, 1, 2], [0, 1, 2]))
        gws[0] = gk
        gbs[0] = dz.sum(axis=(0, 1, 2))
    return loss, gws, gbs


def grad(state: LearnerState, x, y):
    """Analytic gradient of the mean minibatch loss, mirroring the state layout."""
    _, gws, gbs = loss_and_grad(state, x, y)
    return gws, gbs


def sgd_step(state: LearnerState, x, y, lr: float) -> float:
    """One in-place SGD update; returns the pre-update minibatch loss."""
    loss, gws, gbs = loss_and_grad(state, x, y)
    for i in range(len(state.weights)):
        state.weights[i] -= lr * gws[i]
        state.biases[i] -= lr * gbs[i]
    return loss


def lr_at(config: LearnerConfig, epoch: int) -> float:
    """Multi-stage schedule: decay by decay_factor at each milestone fraction."""
    drops = sum(epoch >= int(m * config.epochs) for m in config.decay_milestones)
    return config.learning_rate * config.decay_factor ** drops


def train(state: LearnerState, x, y, config: LearnerConfig | None = None):
    """Minibatch SGD from `state`; returns (final state, per-epoch mean loss trace).

    The shuffling stream is seeded from the config, so identical
    (state, data, config) triples reproduce bit-identical results. The
    input state is not mutated.
    """
    cfg = config if config is not None else state.config
    cfg.validate()
    xb = as_batch(cfg, x)
    if len(xb) == 0:
        raise ValueError("empty dataset")
    yb = _as_labels(cfg, y, len(xb))
    out = state.copy()
    rng = np.random.default_rng(derive_seed(cfg.seed, "shuffle"))
    n = len(xb)
    trace: list[float] = []
    for epoch in range(cfg.epochs):
        lr = lr_at(cfg, epoch)
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            total += sgd_step(out, xb[idx], yb[idx], lr) * len(idx)
        trace.append(total / n)
    return out, trace


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def config_to_dict(config: LearnerConfig) -> dict:
    d = {
        "input_shape": list(config.input_shape),
        "n_classes": config.n_classes,
        "hidden": list(config.hidden),
        "conv": None if config.conv is None else {"filters": config.conv.filters, "kernel": config.conv.kernel},
        "activation": config.activation,
        "learning_rate": config.learning_rate,
        "decay_milestones": list(config.decay_milestones),
        "decay_factor": config.decay_factor,
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "init_scale": config.init_scale,
        "seed": config.seed,
    }
    return d


def config_from_dict(d: dict) -> LearnerConfig:
    known = {
        "input_shape", "n_classes", "hidden", "conv", "activation", "learning_rate",
        "decay_milestones", "decay_factor", "epochs", "batch_size", "init_scale", "seed",
    }
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown learner config keys: {sorted(unknown)}")
    kwargs = dict(d)
    if "input_shape" in kwargs:
        kwargs["input_shape"] = tuple(int(v) for v in kwargs["input_shape"])
    if "hidden" in kwargs:
        kwargs["hidden"] = tuple(int(v) for v in kwargs["hidden"])
    if "decay_milestones" in kwargs:
        kwargs["decay_milestones"] = tuple(float(v) for v in kwargs["decay_milestones"])
    conv = kwargs.get("conv")
    if conv is not None:
        kwargs["conv"] = ConvSpec(filters=int(conv["filters"]), kernel=int(conv["kernel"]))
    return LearnerConfig(**kwargs)


def _pack_array(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "data": arr.ravel().tolist()}


def _unpack_array(obj: dict, path) -> np.ndarray:
    arr = np.asarray(obj["data"], dtype=np.float64)
    shape = tuple(int(d) for d in obj["shape"])
    if arr.size != int(np.prod(shape)):
        raise ValueError(f"{path}: array data does not match its declared shape {shape}")
    return arr.reshape(shape)


def save_checkpoint(state: LearnerState, path) -> None:
    """Versioned JSON checkpoint holding flat row-major weight arrays.

    float64 values round-trip exactly through the JSON encoding.
    """
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "config": config_to_dict(state.config),
        "weights": [_pack_array(w) for w in state.weights],
        "biases": [_pack_array(b) for b in state.biases],
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def load_checkpoint(path) -> LearnerState:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("magic") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a learner checkpoint (bad magic)")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    config = config_from_dict(payload["config"])
    config.validate()
    weights = [_unpack_array(w, path) for w in payload["weights"]]
    biases = [_unpack_array(b, path) for b in payload["biases"]]
    expected = param_shapes(config)
    got = [(w.shape, b.shape) for w, b in zip(weights, biases)]
    if len(got) != len(expected) or any(g != e for g, e in zip(got, expected)):
        raise ValueError(f"{path}: weight shapes {got} do not match config {expected}")
    for arr in (*weights, *biases):
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{path}: checkpoint contains non-finite values")
    return LearnerState(config=config, weights=weights, biases=biases)
