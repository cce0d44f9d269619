"""Descriptor -> (x, y, z, p) scene-coordinate regressor.

A plain ReLU MLP written against numpy. Channels 0..2 of the output are the
scene coordinate in meters; channel 3 goes through a sigmoid and is the
per-keypoint confidence ``p``. The per-sample loss is

    p * ||c - w|| - log(p)

so ``p`` acts as a learned precision weight and the log term stops it from
collapsing to zero. A frame's loss is the mean over its samples and a batch's
loss the mean over its frames.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

from .matching import LabeledSample, stack_samples
from .scene_oracle import Frame

DEFAULT_HIDDEN = (512, 1024, 1024, 512)
CHECKPOINT_MAGIC = b"DSYNREG\x00"
CHECKPOINT_VERSION = 1
P_EPS = 1e-15


@dataclass(eq=False)
class RegressorParams:
    weights: list[np.ndarray]  # layer l: (in, out)
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must be non-empty and paired")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: inconsistent shapes {w.shape} / {b.shape}")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ValueError(f"layer {i}: input size does not match previous layer")
        if self.weights[-1].shape[1] != 4:
            raise ValueError("output layer must have 4 units")

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def astype(self, dtype) -> "RegressorParams":
        return RegressorParams([w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases])

    def copy(self) -> "RegressorParams":
        return self.astype(self.weights[0].dtype)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for a in self.arrays():
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, RegressorParams):
            return NotImplemented
        return self.dims == other.dims and all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


@dataclass(frozen=True)
class Prediction:
    coordinate: np.ndarray
    uncertainty: float


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    decay_factor: float = 0.5
    decay_interval: int | None = None  # epochs; None -> max(1, epochs // 7)
    batch_size: int = 4  # frames per step
    epochs: int = 20
    max_steps: int | None = None  # when set, replaces `epochs` with an optimizer-step budget
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    dtype: str = "float32"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must be in (0, 1]")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.decay_interval is not None and self.decay_interval < 1:
            raise ValueError("decay_interval must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    def epoch_count(self, n_frames: int) -> int:
        if self.max_steps is None:
            return self.epochs
        per_epoch = -(-n_frames // self.batch_size)
        return -(-self.max_steps // per_epoch)

    def decay_interval_for(self, n_frames: int) -> int:
        return self.decay_interval or max(1, self.epoch_count(n_frames) // 7)


@dataclass
class TrainResult:
    params: RegressorParams
    loss_trace: list[float]
    init_checksum: str
    steps: int = 0
    lr_trace: list[float] = field(default_factory=list)


def init_params(descriptor_dim: int, seed: int, hidden=DEFAULT_HIDDEN) -> RegressorParams:
    """He-uniform weights, zero biases."""
    rng = np.random.default_rng([seed, 0x1A1])
    dims = [descriptor_dim, *hidden, 4]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        lim = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return RegressorParams(weights, biases)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward_batch(params: RegressorParams, x: np.ndarray, keep_cache: bool = False):
    """Raw network output (n, 4); optionally the pre-activations for backprop."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ValueError(f"expected descriptors of dim {params.input_dim}, got shape {x.shape}")
    a = x.astype(params.weights[0].dtype, copy=False)
    acts, pre = [a], []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        if i < last:
            pre.append(z)
            a = np.maximum(z, 0)
            acts.append(a)
        else:
            a = z
    return (a, (acts, pre)) if keep_cache else a


def _split(out):
    p = np.clip(_sigmoid(out[:, 3].astype(np.float64)), P_EPS, 1.0 - P_EPS)
    return out[:, :3], p


def forward(params: RegressorParams, descriptor) -> Prediction:
    out = forward_batch(params, np.asarray(descriptor).reshape(1, -1))
    c, p = _split(out)
    return Prediction(np.asarray(c[0], dtype=np.float64), float(p[0]))


def loss(pred: Prediction, target) -> float:
    r = np.linalg.norm(np.asarray(pred.coordinate, dtype=np.float64) - np.asarray(target, dtype=np.float64))
    return float(pred.uncertainty * r - np.log(pred.uncertainty))


def _sample_terms(out, y):
    """Per-row loss and d(loss)/d(out) for raw outputs ``out`` against targets ``y``."""
    z = out[:, 3]
    r = out[:, :3] - y
    rho = np.sqrt(np.sum(r * r, axis=1))
    p = _sigmoid(z)
    # -log(sigmoid(z)) == logaddexp(0, -z), stable for large |z|
    per = p * rho + np.logaddexp(0.0, -z)
    g = np.empty_like(out)
    safe = np.where(rho > 0, rho, 1.0)
    g[:, :3] = (p / safe)[:, None] * r * (rho > 0)[:, None]
    g[:, 3] = rho * p * (1.0 - p) - (1.0 - p)
    return per, g


def loss_and_grad(params: RegressorParams, frames: list[tuple[np.ndarray, np.ndarray]]):
    """Mean-over-frames of per-frame mean loss, and its gradient for every parameter.

    ``frames`` is a list of (descriptors (n, d), targets (n, 3)); empty frames are skipped.
    """
    frames = [(x, y) for x, y in frames if len(x)]
    if not frames:
        raise ValueError("no samples in batch")
    x = np.concatenate([f[0] for f in frames])
    y = np.concatenate([f[1] for f in frames]).astype(params.weights[0].dtype, copy=False)
    wts = np.concatenate([np.full(len(f[0]), 1.0 / (len(f[0]) * len(frames))) for f in frames])
    out, (acts, pre) = forward_batch(params, x, keep_cache=True)
    per, g = _sample_terms(out, y)
    total = float(np.dot(per.astype(np.float64), wts))
    d = g * wts.astype(g.dtype)[:, None]
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ d
        gb[i] = d.sum(axis=0)
        if i:
            d = (d @ params.weights[i].T) * (pre[i - 1] > 0)
    return total, RegressorParams(gw, gb)


def _as_arrays(frame_samples) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(frame_samples, tuple):
        x, y = frame_samples
        return np.asarray(x), np.asarray(y, dtype=np.float64)
    return stack_samples(list(frame_samples))


def train(samples_by_frame, cfg: TrainConfig, init: RegressorParams | None = None) -> TrainResult:
    """Adam on mini-batches of ``cfg.batch_size`` frames in a seeded shuffled order.

    ``samples_by_frame`` holds, per frame, either a list of LabeledSample or a
    ``(descriptors, targets)`` array pair.
    """
    frames = [_as_arrays(f) for f in samples_by_frame]
    frames = [f for f in frames if len(f[0])]
    if not frames:
        raise ValueError("empty training set")
    dtype = np.dtype(cfg.dtype)
    dim = frames[0][0].shape[1]
    frames = [(x.astype(dtype), y.astype(dtype)) for x, y in frames]
    params = init.copy() if init is not None else init_params(dim, cfg.seed, cfg.hidden)
    init_sum = params.checksum()
    params = params.astype(dtype)
    theta = params.arrays()
    m = [np.zeros_like(a) for a in theta]
    v = [np.zeros_like(a) for a in theta]
    rng = np.random.default_rng([cfg.seed, 0x7EA1])
    epochs = cfg.epoch_count(len(frames))
    interval = cfg.decay_interval_for(len(frames))
    budget = cfg.max_steps if cfg.max_steps is not None else np.inf
    lr = cfg.learning_rate
    step = 0
    trace, lrs = [], []
    for epoch in range(epochs):
        if epoch and epoch % interval == 0:
            lr *= cfg.decay_factor
        order = rng.permutation(len(frames))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            if step >= budget:
                break
            batch = [frames[i] for i in order[start : start + cfg.batch_size]]
            value, grads = loss_and_grad(params, batch)
            losses.append(value)
            step += 1
            b1c = 1.0 - cfg.beta1**step
            b2c = 1.0 - cfg.beta2**step
            for a, g, mi, vi in zip(theta, grads.arrays(), m, v):
                mi *= cfg.beta1
                mi += (1.0 - cfg.beta1) * g
                vi *= cfg.beta2
                vi += (1.0 - cfg.beta2) * (g * g)
                a -= (lr / b1c) * mi / (np.sqrt(vi / b2c) + cfg.adam_eps)
        trace.append(float(np.mean(losses)))
        lrs.append(lr)
    return TrainResult(params.astype(np.float64), trace, init_sum, step, lrs)


def predict_batch(params: RegressorParams, descriptors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if len(descriptors) == 0:
        return np.zeros((0, 3)), np.zeros(0)
    c, p = _split(forward_batch(params, descriptors))
    return np.asarray(c, dtype=np.float64), p


def predict_frame(params: RegressorParams, frame: Frame, uncertainty_floor: float = 0.0):
    """Keypoints, predicted coordinates and confidences for predictions with ``p >= floor``."""
    coords, p = predict_batch(params, frame.descriptors)
    keep = p >= uncertainty_floor
    return frame.keypoints[keep], coords[keep], p[keep]


def save_checkpoint(params: RegressorParams, stream: BinaryIO) -> None:
    """Magic, version, layer count, dims, then per layer W (row-major) and b as LE float64."""
    dims = params.dims
    stream.write(CHECKPOINT_MAGIC)
    stream.write(struct.pack("<II", CHECKPOINT_VERSION, len(params.weights)))
    stream.write(struct.pack(f"<{len(dims)}I", *dims))
    for w, b in zip(params.weights, params.biases):
        stream.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        stream.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def _read_exact(stream, n):
    buf = stream.read(n)
    if len(buf) != n:
        raise ValueError("truncated checkpoint")
    return buf


def load_checkpoint(stream: BinaryIO) -> RegressorParams:
    if _read_exact(stream, len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise ValueError("not a regressor checkpoint (bad magic)")
    version, n_layers = struct.unpack("<II", _read_exact(stream, 8))
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    dims = struct.unpack(f"<{n_layers + 1}I", _read_exact(stream, 4 * (n_layers + 1)))
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(_read_exact(stream, 8 * fan_in * fan_out), dtype="<f8").reshape(fan_in, fan_out)
        b = np.frombuffer(_read_exact(stream, 8 * fan_out), dtype="<f8")
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    if stream.read(1):
        raise ValueError("trailing bytes after checkpoint payload")
    return RegressorParams(weights, biases)
