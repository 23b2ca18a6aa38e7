"""Convolutional classifier in plain numpy.

Inputs are NHWC batches: (batch, scale, time, channel). Each convolutional
block is conv -> ReLU -> optional max-pool -> dropout; dense blocks are
affine -> ReLU -> dropout; the output block is affine -> softmax over the
three classes.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .config import DEFAULT_CONV_FILTERS, DEFAULT_DENSE_UNITS, PipelineConfig
from .dataset import EpochSet, balance, build_epochs, kfold_split
from .wavelet import WaveletTensor

log = logging.getLogger(__name__)

N_CLASSES = 3
PROB_FLOOR = 1e-12

_CKPT_MAGIC = b"FPCKPT"
_CKPT_VERSION = 1


# --------------------------------------------------------------------------
# Layer plan
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv" or "dense"
    units: int
    kernel: tuple[int, int] = (0, 0)
    pool: tuple[int, int] = (1, 1)
    dropout: float = 0.0


@dataclass(frozen=True)
class LayerPlan:
    input_shape: tuple[int, int, int]  # scale, time, channel
    layers: tuple[LayerSpec, ...]
    n_classes: int = N_CLASSES

    def __post_init__(self):
        for spec in self.layers:
            if spec.kind == "conv" and spec.kernel not in ((3, 3), (2, 2), (1, 1)):
                raise ValueError(f"unsupported kernel size {spec.kernel}")
        self.shapes()  # validates pooling

    def shapes(self) -> list[tuple[int, ...]]:
        """Output shape of every block, starting with the input."""
        h, w, c = self.input_shape
        out = [(h, w, c)]
        flat = None
        for spec in self.layers:
            if spec.kind == "conv":
                if flat is not None:
                    raise ValueError("convolution after a dense layer")
                ph, pw = spec.pool
                if h % ph or w % pw:
                    raise ValueError(f"pool {spec.pool} does not divide feature map {(h, w)}")
                h, w, c = h // ph, w // pw, spec.units
                out.append((h, w, c))
            elif spec.kind == "dense":
                flat = spec.units
                out.append((flat,))
            else:
                raise ValueError(f"unknown layer kind {spec.kind!r}")
        return out

    @property
    def flat_size(self) -> int:
        """Length of the flattened feature map feeding the first dense layer."""
        h, w, c = [s for s in self.shapes() if len(s) == 3][-1]
        return h * w * c

    @property
    def feature_size(self) -> int:
        return self.layers[-1].units

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "n_classes": self.n_classes,
            "layers": [
                {"kind": s.kind, "units": s.units, "kernel": list(s.kernel),
                 "pool": list(s.pool), "dropout": s.dropout}
                for s in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LayerPlan":
        layers = tuple(
            LayerSpec(s["kind"], s["units"], tuple(s["kernel"]), tuple(s["pool"]), s["dropout"])
            for s in d["layers"]
        )
        return cls(tuple(d["input_shape"]), layers, d.get("n_classes", N_CLASSES))


def build_plan(
    input_shape: tuple[int, int, int] = (10, 256, 22),
    conv_filters: Sequence[int] = DEFAULT_CONV_FILTERS,
    dense_units: Sequence[int] = DEFAULT_DENSE_UNITS,
    conv_dropout: float = 0.25,
    dense_dropout: float = 0.5,
) -> LayerPlan:
    """Six conv layers (3x3 x4 then 2x2 x2) pooling after layers 2, 4 and 6.

    Pools are (1,4), (2,4), (1,4) over (scale, time); with a single scale row
    (raw input) the scale factors become 1. For the default 10 x 256 x 22
    input this ends in a 5 x 4 x 20 map, i.e. 400 inputs to the first dense layer.
    """
    if len(conv_filters) != 6:
        raise ValueError("the plan has exactly six convolutional layers")
    scale_rows = input_shape[0]
    kernels = [(3, 3)] * 4 + [(2, 2)] * 2
    pools = {1: (1, 4), 3: (2, 4), 5: (1, 4)}
    layers = []
    for i, units in enumerate(conv_filters):
        pool = pools.get(i, (1, 1))
        if scale_rows == 1:
            pool = (1, pool[1])
        layers.append(LayerSpec("conv", int(units), kernels[i], pool, conv_dropout))
    for units in dense_units:
        layers.append(LayerSpec("dense", int(units), dropout=dense_dropout))
    return LayerPlan(tuple(int(s) for s in input_shape), tuple(layers))


def plan_for(config: PipelineConfig, input_shape: tuple[int, int, int]) -> LayerPlan:
    return build_plan(input_shape, config.conv_filters, config.dense_units,
                      config.conv_dropout, config.dense_dropout)


# --------------------------------------------------------------------------
# Parameters
# --------------------------------------------------------------------------


@dataclass
class NetworkParameters:
    """Weights, biases and Adadelta accumulators, keyed ``<layer>.w`` / ``<layer>.b``.

    Conv weights are (kh, kw, in, out); dense weights are (in, out).
    """

    plan: LayerPlan
    weights: dict[str, np.ndarray]
    seed: int = 0
    sq_grad: dict[str, np.ndarray] = field(default_factory=dict)
    sq_update: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for key, w in self.weights.items():
            self.sq_grad.setdefault(key, np.zeros_like(w))
            self.sq_update.setdefault(key, np.zeros_like(w))

    @property
    def dtype(self):
        return next(iter(self.weights.values())).dtype

    def copy(self) -> "NetworkParameters":
        return NetworkParameters(
            self.plan, {k: v.copy() for k, v in self.weights.items()}, self.seed,
            {k: v.copy() for k, v in self.sq_grad.items()},
            {k: v.copy() for k, v in self.sq_update.items()},
        )

    def n_parameters(self) -> int:
        return sum(w.size for w in self.weights.values())


def layer_names(plan: LayerPlan) -> list[str]:
    names, conv, dense = [], 0, 0
    for spec in plan.layers:
        if spec.kind == "conv":
            conv += 1
            names.append(f"conv{conv}")
        else:
            dense += 1
            names.append(f"dense{dense}")
    return names + ["output"]


def init_params(plan: LayerPlan, seed: int = 0, dtype=np.float32) -> NetworkParameters:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights: dict[str, np.ndarray] = {}
    channels = plan.input_shape[2]
    fan = None
    for name, spec in zip(layer_names(plan), plan.layers):
        if spec.kind == "conv":
            kh, kw = spec.kernel
            fan_in, fan_out = kh * kw * channels, kh * kw * spec.units
            shape = (kh, kw, channels, spec.units)
            channels = spec.units
        else:
            fan_in = plan.flat_size if fan is None else fan
            fan_out = spec.units
            shape = (fan_in, spec.units)
            fan = spec.units
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights[f"{name}.w"] = rng.uniform(-limit, limit, shape).astype(dtype)
        weights[f"{name}.b"] = np.zeros(shape[-1], dtype=dtype)
    fan_in = fan if fan is not None else plan.flat_size
    limit = math.sqrt(6.0 / (fan_in + plan.n_classes))
    weights["output.w"] = rng.uniform(-limit, limit, (fan_in, plan.n_classes)).astype(dtype)
    weights["output.b"] = np.zeros(plan.n_classes, dtype=dtype)
    return NetworkParameters(plan, weights, seed)


# --------------------------------------------------------------------------
# Layer primitives
# --------------------------------------------------------------------------


def _same_padding(k: int) -> tuple[int, int]:
    total = k - 1
    return total // 2, total - total // 2


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """'Same'-padded stride-1 convolution (cross-correlation), NHWC."""
    n, h, wd, c = x.shape
    kh, kw, _, f = w.shape
    (pt, pb), (pl, pr) = _same_padding(kh), _same_padding(kw)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    out = np.zeros((n * h * wd, f), dtype=np.result_type(x, w))
    for i in range(kh):
        for j in range(kw):
            patch = np.ascontiguousarray(xp[:, i:i + h, j:j + wd, :]).reshape(-1, c)
            out += patch @ w[i, j]
    out += b
    return out.reshape(n, h, wd, f)


def conv2d_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray, need_dx: bool = True):
    """Gradients (dx, dw, db) of :func:`conv2d_forward`."""
    n, h, wd, c = x.shape
    kh, kw, _, f = w.shape
    (pt, pb), (pl, pr) = _same_padding(kh), _same_padding(kw)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    d2 = dout.reshape(-1, f)
    dw = np.empty_like(w)
    dxp = np.zeros_like(xp) if need_dx else None
    for i in range(kh):
        for j in range(kw):
            patch = np.ascontiguousarray(xp[:, i:i + h, j:j + wd, :]).reshape(-1, c)
            dw[i, j] = patch.T @ d2
            if need_dx:
                dxp[:, i:i + h, j:j + wd, :] += (d2 @ w[i, j].T).reshape(n, h, wd, c)
    db = d2.sum(axis=0)
    dx = dxp[:, pt:pt + h, pl:pl + wd, :] if need_dx else None
    return dx, dw, db


def maxpool_forward(x: np.ndarray, pool: tuple[int, int]):
    """Non-overlapping max-pool. Returns (out, argmax) with argmax the first
    maximal position of each window in row-major scan order."""
    ph, pw = pool
    n, h, w, c = x.shape
    win = x.reshape(n, h // ph, ph, w // pw, pw, c).transpose(0, 1, 3, 5, 2, 4)
    win = win.reshape(n, h // ph, w // pw, c, ph * pw)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool_backward(dout: np.ndarray, arg: np.ndarray, pool: tuple[int, int]) -> np.ndarray:
    ph, pw = pool
    n, ho, wo, c = dout.shape
    dwin = np.zeros((n, ho, wo, c, ph * pw), dtype=dout.dtype)
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    dwin = dwin.reshape(n, ho, wo, c, ph, pw).transpose(0, 1, 4, 2, 5, 3)
    return dwin.reshape(n, ho * ph, wo * pw, c)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _dropout_mask(rng: np.random.Generator, shape, rate: float, dtype) -> np.ndarray:
    keep = 1.0 - rate
    return ((rng.random(shape) < keep) / keep).astype(dtype)


# --------------------------------------------------------------------------
# Forward / loss / backward
# --------------------------------------------------------------------------


@dataclass
class ForwardCache:
    inputs: list = field(default_factory=list)      # block inputs
    pre_relu: list = field(default_factory=list)
    pool_args: list = field(default_factory=list)
    masks: list = field(default_factory=list)        # dropout masks (None when off)
    activations: list = field(default_factory=list)  # block outputs after dropout
    flat_shape: tuple = ()


def forward(params: NetworkParameters, x: np.ndarray, mode: str = "infer",
            rng: Optional[np.random.Generator] = None,
            masks: Optional[list] = None) -> tuple[np.ndarray, ForwardCache]:
    """Class probabilities (batch x 3) plus the activations needed for backprop.

    ``mode="train"`` applies inverted dropout with masks drawn from ``rng``
    (or replays ``masks`` from an earlier cache); ``mode="infer"`` is
    deterministic and dropout-free.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    plan = params.plan
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[0] == 0 or tuple(x.shape[1:]) != tuple(plan.input_shape):
        raise ValueError(f"expected a non-empty batch of shape (B, {plan.input_shape}), got {x.shape}")
    if mode == "train" and masks is None and rng is None:
        rng = np.random.default_rng(params.seed)
    dtype = params.dtype
    a = x.astype(dtype, copy=False)
    cache = ForwardCache()
    names = layer_names(plan)
    for idx, (name, spec) in enumerate(zip(names, plan.layers)):
        w, b = params.weights[f"{name}.w"], params.weights[f"{name}.b"]
        if spec.kind == "dense" and a.ndim == 4:
            cache.flat_shape = a.shape
            a = a.reshape(a.shape[0], -1)
        cache.inputs.append(a)
        z = conv2d_forward(a, w, b) if spec.kind == "conv" else a @ w + b
        cache.pre_relu.append(z)
        a = np.maximum(z, 0)
        arg = None
        if spec.kind == "conv" and spec.pool != (1, 1):
            a, arg = maxpool_forward(a, spec.pool)
        cache.pool_args.append(arg)
        mask = None
        if mode == "train" and spec.dropout > 0:
            mask = masks[idx] if masks is not None else _dropout_mask(rng, a.shape, spec.dropout, dtype)
            a = a * mask
        cache.masks.append(mask)
        cache.activations.append(a)
    if a.ndim == 4:
        cache.flat_shape = a.shape
        a = a.reshape(a.shape[0], -1)
    cache.inputs.append(a)
    logits = a @ params.weights["output.w"] + params.weights["output.b"]
    return softmax(logits), cache


def loss(probs: np.ndarray, labels) -> float:
    """Mean categorical cross-entropy, probabilities clamped at 1e-12."""
    labels = np.asarray(labels, dtype=np.int64)
    p = probs[np.arange(len(labels)), labels]
    return float(np.mean(-np.log(np.maximum(p, PROB_FLOOR))))


def gradients(params: NetworkParameters, x: np.ndarray, labels,
              cache: Optional[ForwardCache] = None, probs: Optional[np.ndarray] = None,
              mode: str = "train", rng: Optional[np.random.Generator] = None) -> dict[str, np.ndarray]:
    """Exact gradient of :func:`loss` w.r.t. every parameter.

    Pass the ``cache`` and ``probs`` of a preceding :func:`forward` call to
    reuse its dropout masks; otherwise the forward pass is recomputed.
    """
    if cache is None or probs is None:
        probs, cache = forward(params, x, mode=mode, rng=rng)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    plan = params.plan
    names = layer_names(plan)
    grads: dict[str, np.ndarray] = {}

    d = probs.copy()
    d[np.arange(n), labels] -= 1.0
    d /= n
    h = cache.inputs[-1]
    grads["output.w"] = h.T @ d
    grads["output.b"] = d.sum(axis=0)
    d = d @ params.weights["output.w"].T

    for idx in range(len(plan.layers) - 1, -1, -1):
        spec, name = plan.layers[idx], names[idx]
        if d.ndim == 2 and spec.kind == "conv":
            d = d.reshape(cache.flat_shape)
        if cache.masks[idx] is not None:
            d = d * cache.masks[idx]
        if cache.pool_args[idx] is not None:
            d = maxpool_backward(d, cache.pool_args[idx], spec.pool)
        d = d * (cache.pre_relu[idx] > 0)
        w = params.weights[f"{name}.w"]
        a_in = cache.inputs[idx]
        if spec.kind == "conv":
            d, dw, db = conv2d_backward(d, a_in, w, need_dx=idx > 0)
        else:
            dw, db = a_in.T @ d, d.sum(axis=0)
            d = d @ w.T
        grads[f"{name}.w"] = dw
        grads[f"{name}.b"] = db
    return grads


def adadelta_step(params: NetworkParameters, grads: dict[str, np.ndarray],
                  rho: float = 0.95, eps: float = 1e-6) -> NetworkParameters:
    """One Adadelta update, applied in place (the same object is returned)."""
    for key, g in grads.items():
        eg2, edx2 = params.sq_grad[key], params.sq_update[key]
        eg2 *= rho
        eg2 += (1.0 - rho) * g * g
        delta = -np.sqrt(edx2 + eps) / np.sqrt(eg2 + eps) * g
        edx2 *= rho
        edx2 += (1.0 - rho) * delta * delta
        params.weights[key] += delta
    return params


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


class EarlyStopping:
    """Tracks the best validation loss; signals a stop after ``patience``
    consecutive passes without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = math.inf
        self.best_pass = 0
        self.passes = 0
        self.bad_passes = 0

    def update(self, val_loss: float) -> bool:
        self.passes += 1
        if val_loss < self.best_loss:
            self.best_loss, self.best_pass, self.bad_passes = val_loss, self.passes, 0
            return False
        self.bad_passes += 1
        return self.bad_passes >= self.patience


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_pass: int = 0

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_pass - 1]


def predict_proba(params: NetworkParameters, data: np.ndarray, batch_size: int = 256) -> np.ndarray:
    out = np.empty((len(data), params.plan.n_classes), dtype=np.float64)
    for i in range(0, len(data), batch_size):
        out[i:i + batch_size] = forward(params, data[i:i + batch_size], "infer")[0]
    return out


def evaluate_loss(params: NetworkParameters, data: np.ndarray, labels, batch_size: int = 256) -> float:
    return loss(predict_proba(params, data, batch_size), labels)


def fit(train: EpochSet, val: EpochSet, config: PipelineConfig,
        params: Optional[NetworkParameters] = None,
        dtype=np.float32) -> tuple[NetworkParameters, History]:
    """Mini-batch Adadelta training with early stopping on validation loss.

    Returns the parameters of the pass with the lowest validation loss.
    """
    if len(train) == 0 or len(val) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if params is None:
        plan = plan_for(config, tuple(train.data.shape[1:]))
        params = init_params(plan, config.seed, dtype)
    rng = np.random.default_rng(config.seed + 1)
    stopper = EarlyStopping(config.patience)
    history = History()
    best = params.copy()
    for epoch in range(config.max_passes):
        order = rng.permutation(len(train))
        total = 0.0
        for i in range(0, len(order), config.batch_size):
            idx = np.sort(order[i:i + config.batch_size])
            xb, yb = train.data[idx], train.labels[idx]
            probs, cache = forward(params, xb, "train", rng=rng)
            total += loss(probs, yb) * len(idx)
            adadelta_step(params, gradients(params, xb, yb, cache, probs), config.rho, config.eps)
        history.train_loss.append(total / len(order))
        history.val_loss.append(evaluate_loss(params, val.data, val.labels))
        log.info("pass %d: train %.4f  val %.4f", epoch + 1, history.train_loss[-1],
                 history.val_loss[-1])
        stop = stopper.update(history.val_loss[-1])
        if stopper.best_pass == stopper.passes:
            best = params.copy()
        if stop:
            break
    history.best_pass = stopper.best_pass
    return best, history


def extract_features(params: NetworkParameters, epochs, batch_size: int = 256) -> np.ndarray:
    """Activations of the last hidden (dense) layer for each epoch, in order."""
    data = epochs.data if isinstance(epochs, EpochSet) else np.asarray(epochs)
    out = np.empty((len(data), params.plan.feature_size), dtype=np.float64)
    for i in range(0, len(data), batch_size):
        _, cache = forward(params, data[i:i + batch_size], "infer")
        out[i:i + batch_size] = cache.activations[-1]
    return out


# --------------------------------------------------------------------------
# Grid search
# --------------------------------------------------------------------------


@dataclass
class GridSearchResult:
    best: PipelineConfig
    mean_losses: list[float]
    fold_losses: list[list[float]]


def cross_validated_losses(config: PipelineConfig, recordings: Sequence[WaveletTensor],
                           k: int) -> list[float]:
    """Best validation loss of each of ``k`` recording-grouped folds.

    Only the training side of each fold is balanced.
    """
    data = EpochSet.concatenate([build_epochs(t, config) for t in recordings])
    losses = []
    for fold in range(k):
        train, val = kfold_split(data, k, fold, config.seed)
        train = balance(train, config.seed + fold)
        _, history = fit(train, val, config)
        losses.append(history.best_val_loss)
        log.info("l=%g fold %d/%d: %.4f", config.preictal_length, fold + 1, k, losses[-1])
    return losses


def grid_search(candidates: Sequence[PipelineConfig], recordings: Sequence[WaveletTensor],
                k: int, fold_losses: Callable = cross_validated_losses) -> GridSearchResult:
    """Pick the candidate with the lowest mean k-fold validation loss
    (first in list order on ties)."""
    if not candidates:
        raise ValueError("no candidate configurations")
    per_candidate = [list(fold_losses(c, recordings, k)) for c in candidates]
    means = [float(np.mean(l)) for l in per_candidate]
    best = int(np.argmin(means))
    return GridSearchResult(candidates[best], means, per_candidate)


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------


def save_checkpoint(path, params: NetworkParameters, config: Optional[PipelineConfig] = None) -> None:
    """Binary checkpoint: magic, version, JSON header length, JSON header
    (plan, seed, config, block order), then float64 little-endian blocks."""
    keys = [f"{n}.{p}" for n in layer_names(params.plan) for p in ("w", "b")]
    header = {
        "plan": params.plan.to_dict(),
        "seed": params.seed,
        "config": None if config is None else config.as_dict(),
        "blocks": [[k, list(params.weights[k].shape)] for k in keys],
    }
    raw = json.dumps(header, sort_keys=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<IQ", _CKPT_VERSION, len(raw)))
        fh.write(raw)
        for k in keys:
            fh.write(np.ascontiguousarray(params.weights[k], dtype="<f8").tobytes())


def load_checkpoint(path, dtype=np.float32) -> tuple[NetworkParameters, Optional[dict]]:
    with open(path, "rb") as fh:
        if fh.read(len(_CKPT_MAGIC)) != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        version, n = struct.unpack("<IQ", fh.read(12))
        if version != _CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(n).decode("utf-8"))
        weights = {}
        for key, shape in header["blocks"]:
            count = int(np.prod(shape))
            block = fh.read(8 * count)
            if len(block) != 8 * count:
                raise ValueError(f"{path}: truncated parameter block {key}")
            weights[key] = np.frombuffer(block, dtype="<f8").reshape(shape).astype(dtype)
    plan = LayerPlan.from_dict(header["plan"])
    return NetworkParameters(plan, weights, header["seed"]), header.get("config")
