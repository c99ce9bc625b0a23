"""A small convolutional classifier with hand-derived gradients.

Everything is plain numpy: convolution (stride 1, zero padding), ReLU,
max pooling, global average pooling, and dense layers, plus softmax
cross-entropy against soft targets and an Adam optimizer. forward and
backward cache the final convolution's activations and their gradients
so class activation maps can be read off afterwards.

Use float64 models when checking gradients numerically and float32 for
actual training runs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import SonarprepError, ShapeMismatchError


class ShapeComposeError(SonarprepError):
    """The layer stack does not compose into a valid network."""


class StaleCacheError(SonarprepError):
    """backward was called without a fresh matching forward pass."""


class NoCacheError(SonarprepError):
    """Class activation maps need a convolution layer to read from."""


class InvalidTargetError(SonarprepError):
    """Soft targets must each sum to one."""


class WrongChannelCountError(SonarprepError):
    """Kernel aggregation expects exactly three input channels."""


class CheckpointFormatError(SonarprepError):
    """A checkpoint file is malformed or incomplete."""


# ---------------------------------------------------------------------------
# architecture descriptors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: int = 3
    padding: int | None = None  # None: kernel//2 for odd kernels, else 0

    @property
    def pad(self) -> int:
        if self.padding is not None:
            return self.padding
        return self.kernel // 2 if self.kernel % 2 else 0


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class MaxPool:
    size: int = 2


@dataclass(frozen=True)
class GlobalAvgPool:
    pass


@dataclass(frozen=True)
class Dense:
    out_features: int | None = None  # None: the class count


@dataclass(frozen=True)
class Architecture:
    """Layer stack plus the expected input layout."""

    layers: tuple
    in_channels: int = 1
    in_features: int | None = None  # set for networks fed flat vectors


#: Compact default: two conv blocks, global pooling, linear head.
DEFAULT_ARCHITECTURE = Architecture((
    Conv(16, 3), Relu(), MaxPool(2),
    Conv(32, 3), Relu(),
    GlobalAvgPool(), Dense(),
))


@dataclass
class ModelState:
    arch: Architecture
    n_classes: int
    params: dict[str, np.ndarray]
    dtype: np.dtype
    last_conv_activations: np.ndarray | None = None
    last_conv_grads: np.ndarray | None = None
    _cache: list | None = field(default=None, repr=False)
    _last_conv_index: int = -1


def _param_name(index: int, layer) -> str:
    kind = "conv" if isinstance(layer, Conv) else "dense"
    return f"{kind}{index}"


def init_model(arch: Architecture, n_classes: int, seed: int,
               dtype=np.float32) -> ModelState:
    """Build a model with Xavier-uniform weights and zero biases."""
    if n_classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    spatial = arch.in_features is None
    channels = arch.in_channels
    features = arch.in_features
    last_conv = -1
    for i, layer in enumerate(arch.layers):
        if isinstance(layer, Conv):
            if not spatial:
                raise ShapeComposeError(f"layer {i}: convolution after flattening")
            fan_in = channels * layer.kernel ** 2
            fan_out = layer.out_channels * layer.kernel ** 2
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            shape = (layer.out_channels, channels, layer.kernel, layer.kernel)
            params[f"{_param_name(i, layer)}.weight"] = \
                rng.uniform(-limit, limit, shape).astype(dtype)
            params[f"{_param_name(i, layer)}.bias"] = \
                np.zeros(layer.out_channels, dtype=dtype)
            channels = layer.out_channels
            last_conv = i
        elif isinstance(layer, MaxPool):
            if not spatial:
                raise ShapeComposeError(f"layer {i}: pooling after flattening")
            if layer.size < 1:
                raise ShapeComposeError(f"layer {i}: pool size must be >= 1")
        elif isinstance(layer, GlobalAvgPool):
            if not spatial:
                raise ShapeComposeError(f"layer {i}: repeated flattening")
            spatial = False
            features = channels
        elif isinstance(layer, Dense):
            if spatial:
                raise ShapeComposeError(
                    f"layer {i}: dense layers need global pooling after convolutions"
                )
            out = layer.out_features if layer.out_features is not None else n_classes
            limit = np.sqrt(6.0 / (features + out))
            params[f"{_param_name(i, layer)}.weight"] = \
                rng.uniform(-limit, limit, (features, out)).astype(dtype)
            params[f"{_param_name(i, layer)}.bias"] = np.zeros(out, dtype=dtype)
            features = out
        elif isinstance(layer, Relu):
            pass
        else:
            raise ShapeComposeError(f"layer {i}: unknown layer {layer!r}")
    if not arch.layers or not isinstance(arch.layers[-1], Dense):
        raise ShapeComposeError("the final layer must be dense")
    if spatial or features != n_classes:
        raise ShapeComposeError(
            f"network emits {features} outputs but {n_classes} classes were requested"
        )
    return ModelState(arch=arch, n_classes=n_classes, params=params,
                      dtype=np.dtype(dtype), _last_conv_index=last_conv)


def aggregate_input_channels(weights: np.ndarray) -> np.ndarray:
    """Collapse 3-channel first-layer kernels to 1 channel by summing."""
    w = np.asarray(weights)
    if w.ndim != 4 or w.shape[1] != 3:
        raise WrongChannelCountError(
            f"expected kernels shaped [out, 3, k, k], got {w.shape}"
        )
    return w.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# layer math
# ---------------------------------------------------------------------------

def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, pad: int):
    batch, _, height, width = x.shape
    out_ch, in_ch, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out_h = height + 2 * pad - k + 1
    out_w = width + 2 * pad - k + 1
    if out_h < 1 or out_w < 1:
        raise ShapeMismatchError(f"input {height}x{width} smaller than kernel {k}")
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * out_h * out_w,
                                                       in_ch * k * k)
    y = cols @ w.reshape(out_ch, -1).T + b
    y = y.reshape(batch, out_h, out_w, out_ch).transpose(0, 3, 1, 2)
    return y, xp


def _conv_backward(dy: np.ndarray, xp: np.ndarray, x_shape, w: np.ndarray, pad: int):
    batch, _, height, width = x_shape
    out_ch, in_ch, k, _ = w.shape
    out_h, out_w = dy.shape[2], dy.shape[3]
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * out_h * out_w,
                                                       in_ch * k * k)
    dy_flat = dy.transpose(0, 2, 3, 1).reshape(-1, out_ch)
    dw = (dy_flat.T @ cols).reshape(w.shape)
    db = dy.sum(axis=(0, 2, 3))
    # grad wrt input: full correlation of dy with channel-swapped flipped kernels
    w_flip = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    dyp = np.pad(dy, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
    dxp, _ = _conv_forward(dyp, w_flip, np.zeros(in_ch, dtype=dy.dtype), pad=0)
    dx = dxp[:, :, pad:pad + height, pad:pad + width]
    return dw, db, dx


def _maxpool_forward(x: np.ndarray, size: int):
    batch, ch, height, width = x.shape
    out_h, out_w = height // size, width // size
    if out_h == 0 or out_w == 0:
        raise ShapeMismatchError(f"input {height}x{width} too small for pool {size}")
    cropped = x[:, :, :out_h * size, :out_w * size]
    patches = cropped.reshape(batch, ch, out_h, size, out_w, size)
    patches = patches.transpose(0, 1, 2, 4, 3, 5).reshape(batch, ch, out_h, out_w, -1)
    idx = patches.argmax(axis=-1)
    y = np.take_along_axis(patches, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape)


def _maxpool_backward(dy: np.ndarray, cache, size: int):
    idx, x_shape = cache
    batch, ch, out_h, out_w = dy.shape
    flat = np.zeros((batch, ch, out_h, out_w, size * size), dtype=dy.dtype)
    np.put_along_axis(flat, idx[..., None], dy[..., None], axis=-1)
    grad = flat.reshape(batch, ch, out_h, out_w, size, size)
    grad = grad.transpose(0, 1, 2, 4, 3, 5).reshape(batch, ch, out_h * size, out_w * size)
    dx = np.zeros(x_shape, dtype=dy.dtype)
    dx[:, :, :out_h * size, :out_w * size] = grad
    return dx


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def forward(model: ModelState, batch: np.ndarray) -> np.ndarray:
    """Run the network, caching what backward and grad_cam need."""
    x = np.asarray(batch).astype(model.dtype, copy=False)
    if model.arch.in_features is None:
        if x.ndim != 4 or x.shape[1] != model.arch.in_channels:
            raise ShapeMismatchError(
                f"expected [batch, {model.arch.in_channels}, H, W], got {x.shape}"
            )
    else:
        if x.ndim != 2 or x.shape[1] != model.arch.in_features:
            raise ShapeMismatchError(
                f"expected [batch, {model.arch.in_features}], got {x.shape}"
            )
    cache: list = []
    for i, layer in enumerate(model.arch.layers):
        if isinstance(layer, Conv):
            name = _param_name(i, layer)
            y, xp = _conv_forward(x, model.params[f"{name}.weight"],
                                  model.params[f"{name}.bias"], layer.pad)
            cache.append((xp, x.shape))
            if i == model._last_conv_index:
                model.last_conv_activations = y.copy()
            x = y
        elif isinstance(layer, Relu):
            x = np.maximum(x, 0)
            cache.append(x)
        elif isinstance(layer, MaxPool):
            x, pool_cache = _maxpool_forward(x, layer.size)
            cache.append(pool_cache)
        elif isinstance(layer, GlobalAvgPool):
            cache.append(x.shape)
            x = x.mean(axis=(2, 3))
        elif isinstance(layer, Dense):
            cache.append(x)
            name = _param_name(i, layer)
            x = x @ model.params[f"{name}.weight"] + model.params[f"{name}.bias"]
    model._cache = cache
    return x


def backward(model: ModelState, grad_logits: np.ndarray) -> dict[str, np.ndarray]:
    """Backpropagate from logit gradients to parameter gradients.

    Consumes the cache from the latest forward pass; a second call
    without a new forward raises StaleCacheError.
    """
    if model._cache is None:
        raise StaleCacheError("run forward before backward")
    g = np.asarray(grad_logits).astype(model.dtype, copy=False)
    grads: dict[str, np.ndarray] = {}
    for i in range(len(model.arch.layers) - 1, -1, -1):
        layer = model.arch.layers[i]
        saved = model._cache[i]
        if isinstance(layer, Conv):
            if i == model._last_conv_index:
                model.last_conv_grads = g.copy()
            name = _param_name(i, layer)
            xp, x_shape = saved
            dw, db, g = _conv_backward(g, xp, x_shape,
                                       model.params[f"{name}.weight"], layer.pad)
            grads[f"{name}.weight"] = dw
            grads[f"{name}.bias"] = db
        elif isinstance(layer, Relu):
            g = g * (saved > 0)
        elif isinstance(layer, MaxPool):
            g = _maxpool_backward(g, saved, layer.size)
        elif isinstance(layer, GlobalAvgPool):
            x_shape = saved
            area = x_shape[2] * x_shape[3]
            g = np.broadcast_to(g[:, :, None, None] / area, x_shape).copy()
        elif isinstance(layer, Dense):
            name = _param_name(i, layer)
            grads[f"{name}.weight"] = saved.T @ g
            grads[f"{name}.bias"] = g.sum(axis=0)
            g = g @ model.params[f"{name}.weight"].T
    model._cache = None
    return grads


def cross_entropy_soft(logits: np.ndarray, targets: np.ndarray):
    """Mean softmax cross-entropy against soft targets.

    Returns (loss, grad_logits) with grad = (softmax - targets) / batch.
    """
    z = np.asarray(logits)
    y = np.asarray(targets)
    if z.shape != y.shape or z.ndim != 2:
        raise ShapeMismatchError(f"logits {z.shape} vs targets {y.shape}")
    row_sums = y.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6):
        raise InvalidTargetError("target rows must sum to 1")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    batch = z.shape[0]
    loss = float(-(y * log_probs).sum() / batch)
    grad = (np.exp(log_probs) - y) / batch
    return loss, grad


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], lr: float = 5e-5,
                   beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()},
                   lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState):
    """One bias-corrected Adam update, in place."""
    state.t += 1
    bias1 = 1.0 - state.beta1 ** state.t
    bias2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        if name not in grads:
            raise ShapeMismatchError(f"no gradient for parameter {name!r}")
        g = np.asarray(grads[name]).astype(p.dtype, copy=False)
        if g.shape != p.shape:
            raise ShapeMismatchError(
                f"gradient for {name!r} has shape {g.shape}, expected {p.shape}"
            )
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p -= state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# class activation maps
# ---------------------------------------------------------------------------

def cam_from_activations(activations: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """Gradient-weighted activation map, min-max scaled into [0, 1].

    Channel weights are the spatial means of the gradients; the weighted
    sum is rectified, then min-max normalized. An all-zero map stays
    all-zero; a flat positive map becomes all ones.
    """
    alpha = grads.mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(alpha, activations, axes=1), 0.0)
    high, low = cam.max(), cam.min()
    if high <= 0:
        return np.zeros_like(cam)
    if high == low:
        return np.ones_like(cam)
    return (cam - low) / (high - low)


def grad_cam(model: ModelState, x: np.ndarray, class_index: int) -> np.ndarray:
    """Class activation map for one input with respect to one class logit."""
    if model._last_conv_index < 0:
        raise NoCacheError("architecture has no convolution layer to map")
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[0] != 1:
        raise ShapeMismatchError(f"expected a single input [1, C, H, W], got {x.shape}")
    logits = forward(model, x)
    if not (0 <= class_index < logits.shape[1]):
        raise ValueError(f"class index {class_index} out of range")
    seed_grad = np.zeros_like(logits)
    seed_grad[0, class_index] = 1.0
    backward(model, seed_grad)
    return cam_from_activations(model.last_conv_activations[0],
                                model.last_conv_grads[0])


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"SPNN1"


def save_checkpoint(path, params: dict[str, np.ndarray]) -> None:
    """Write named tensors as float32 in a little-endian binary format."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(params)))
        for name, tensor in params.items():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", tensor.ndim))
            f.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            f.write(np.asarray(tensor).astype("<f4").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read back the tensors written by :func:`save_checkpoint`."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:5] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("bad magic: not a checkpoint")
    pos = 5
    tensors: dict[str, np.ndarray] = {}
    try:
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            size = int(np.prod(shape, dtype=np.int64)) if rank else 1
            n_bytes = size * 4
            if pos + n_bytes > len(data):
                raise CheckpointFormatError(f"tensor {name!r} truncated")
            tensors[name] = np.frombuffer(
                data, dtype="<f4", count=size, offset=pos
            ).reshape(shape).copy()
            pos += n_bytes
    except struct.error as exc:
        raise CheckpointFormatError("checkpoint truncated in a header") from exc
    return tensors


def apply_checkpoint(model: ModelState, tensors: dict[str, np.ndarray]) -> ModelState:
    """Load tensors into a model by name.

    Three-channel first-layer conv kernels are aggregated automatically
    when the model expects a single input channel.
    """
    for name, p in model.params.items():
        if name not in tensors:
            raise CheckpointFormatError(f"checkpoint is missing tensor {name!r}")
        t = tensors[name]
        if t.shape == p.shape:
            loaded = t
        elif (p.ndim == 4 and t.ndim == 4 and p.shape[1] == 1 and t.shape[1] == 3
              and t.shape[0] == p.shape[0] and t.shape[2:] == p.shape[2:]):
            loaded = aggregate_input_channels(t)
        else:
            raise ShapeMismatchError(
                f"tensor {name!r} has shape {t.shape}, model expects {p.shape}"
            )
        p[...] = loaded.astype(model.dtype)
    return model
