"""Layers, architecture, forward and reverse passes of the estimator.

Public functions take and return arrays in ``(N, C, H, W)`` order. Inside the
network activations are kept channel-major, ``(C, N, H, W)``, so that every
3x3 convolution is one ``(out, in*9) @ (in*9, N*H*W)`` matrix product.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch

FAST_CHANNELS = (8, 8, 16, 16, 32, 32, 64, 64)
PAPER_CHANNELS = (16, 16, 32, 32, 64, 64, 128, 128)
FEATURE_STRIDES = (1, 2, 1, 2, 1, 2, 1, 2)
N_OUTPUTS = 8


@dataclass
class ConvLayer:
    weight: np.ndarray         # (out, in, 3, 3)
    bias: np.ndarray           # (out,)
    stride: int = 1

    def __post_init__(self):
        if self.weight.ndim != 4 or self.weight.shape[2:] != (3, 3):
            raise ShapeMismatch(f"conv weight must be (out, in, 3, 3), got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeMismatch("bias length must equal out_channels")
        if self.stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]


@dataclass
class HENModel:
    """Feature convolutions (each followed by ReLU), then a linear projection
    convolution to 8 channels whose global average is the prediction."""

    layers: list[ConvLayer]
    loss_scale: float = 32.0
    input_size: int | None = None

    def __post_init__(self):
        if not self.layers:
            raise ValueError("model needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_channels != b.in_channels:
                raise ShapeMismatch("consecutive layers disagree on channel count")

    @property
    def in_channels(self) -> int:
        return self.layers[0].in_channels

    @property
    def out_channels(self) -> int:
        return self.layers[-1].out_channels

    @property
    def dtype(self):
        return self.layers[0].weight.dtype

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params()))

    def copy(self) -> "HENModel":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "HENModel":
        m = self.copy()
        for layer in m.layers:
            layer.weight = layer.weight.astype(dtype)
            layer.bias = layer.bias.astype(dtype)
        return m

    def feature_size(self, input_size: int) -> int:
        n = input_size
        for layer in self.layers:
            n = conv_out_size(n, layer.stride)
        return n


def conv_out_size(n: int, stride: int) -> int:
    return (n + 2 - 3) // stride + 1


def init_layer(rng, c_in, c_out, stride, dtype=np.float32) -> ConvLayer:
    std = np.sqrt(2.0 / (c_in * 9))
    w = rng.normal(0.0, std, size=(c_out, c_in, 3, 3)).astype(dtype)
    return ConvLayer(w, np.zeros(c_out, dtype=dtype), stride)


def build_hen(channels=PAPER_CHANNELS, strides=FEATURE_STRIDES, seed: int = 0,
              in_channels: int = 2, out_channels: int = N_OUTPUTS,
              loss_scale: float = 32.0, input_size: int | None = 128,
              dtype=np.float32) -> HENModel:
    """Build a model; the default plan is the nine-layer estimator."""
    if len(channels) != len(strides):
        raise ValueError("channels and strides must have equal length")
    rng = np.random.default_rng(seed)
    layers = []
    c = in_channels
    for c_out, s in zip(channels, strides):
        layers.append(init_layer(rng, c, c_out, s, dtype))
        c = c_out
    layers.append(init_layer(rng, c, out_channels, 1, dtype))
    return HENModel(layers, float(loss_scale), input_size)


# --------------------------------------------------------------------------- kernels (C, N, H, W)

def _im2col(x, stride):
    c, n, h, w = x.shape
    ho, wo = conv_out_size(h, stride), conv_out_size(w, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    span_h = stride * (ho - 1) + 1
    span_w = stride * (wo - 1) + 1
    taps = [xp[:, :, ky:ky + span_h:stride, kx:kx + span_w:stride]
            for ky in range(3) for kx in range(3)]
    cols = np.stack(taps, axis=1).reshape(c * 9, n * ho * wo)
    return cols, (ho, wo)


def _col2im(dcols, shape, stride, out_hw):
    c, n, h, w = shape
    ho, wo = out_hw
    d = dcols.reshape(c, 9, n, ho, wo)
    dxp = np.zeros((c, n, h + 2, w + 2), dtype=dcols.dtype)
    span_h = stride * (ho - 1) + 1
    span_w = stride * (wo - 1) + 1
    for k in range(9):
        ky, kx = divmod(k, 3)
        dxp[:, :, ky:ky + span_h:stride, kx:kx + span_w:stride] += d[:, k]
    return dxp[:, :, 1:-1, 1:-1]


def _conv_fwd(x, layer: ConvLayer):
    if x.shape[0] != layer.in_channels:
        raise ShapeMismatch(f"input has {x.shape[0]} channels, layer expects {layer.in_channels}")
    cols, (ho, wo) = _im2col(x, layer.stride)
    w2 = layer.weight.reshape(layer.out_channels, -1)
    out = w2 @ cols + layer.bias[:, None]
    return out.reshape(layer.out_channels, x.shape[1], ho, wo), cols


def _conv_bwd(dout, cols, x_shape, layer: ConvLayer, need_dx: bool = True):
    o = layer.out_channels
    d2 = dout.reshape(o, -1)
    dw = (d2 @ cols.T).reshape(layer.weight.shape)
    db = d2.sum(axis=1)
    if not need_dx:
        return None, dw, db
    dcols = layer.weight.reshape(o, -1).T @ d2
    dx = _col2im(dcols, x_shape, layer.stride, dout.shape[2:])
    return dx, dw, db


# --------------------------------------------------------------------------- public layer ops (N, C, H, W)

def conv2d_forward(x, layer: ConvLayer) -> np.ndarray:
    """3x3 cross-correlation, zero padding 1. ``x`` is (C, H, W) or (N, C, H, W)."""
    x = np.asarray(x)
    single = x.ndim == 3
    xb = x[None] if single else x
    out, _ = _conv_fwd(np.ascontiguousarray(xb.transpose(1, 0, 2, 3)), layer)
    out = out.transpose(1, 0, 2, 3)
    return out[0] if single else out


def conv2d_backward(dout, x, layer: ConvLayer):
    """Gradients ``(dx, dweight, dbias)`` for a batched (N, C, H, W) input."""
    xc = np.ascontiguousarray(np.asarray(x).transpose(1, 0, 2, 3))
    _, cols = _conv_fwd(xc, layer)
    dc = np.ascontiguousarray(np.asarray(dout).transpose(1, 0, 2, 3))
    dx, dw, db = _conv_bwd(dc, cols, xc.shape, layer)
    return dx.transpose(1, 0, 2, 3), dw, db


def gap_forward(x) -> np.ndarray:
    """Per-channel spatial mean over the last two axes."""
    return np.asarray(x).mean(axis=(-2, -1))


def gap_backward(dy, hw) -> np.ndarray:
    h, w = hw
    dy = np.asarray(dy)
    return np.broadcast_to(dy[..., None, None] / (h * w), dy.shape + (h, w)).copy()


# --------------------------------------------------------------------------- network

@dataclass
class Cache:
    inputs: list          # layer inputs, channel-major
    cols: list
    preacts: list


def check_input(model: HENModel, x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[1] != model.in_channels:
        raise ShapeMismatch(f"expected (N, {model.in_channels}, H, W) input, got {x.shape}")
    if model.input_size is not None and x.shape[2:] != (model.input_size, model.input_size):
        raise ShapeMismatch(f"expected {model.input_size}x{model.input_size} input, got {x.shape[2:]}")
    return x


def forward_batch(model: HENModel, x, shifts=None, keep_cache: bool = False):
    """Run the network on ``(N, C, H, W)`` input.

    Returns ``(raw, fmap, cache)``: ``raw`` is (N, 8) in loss units, ``fmap``
    the (N, 8, h, w) pre-GAP maps. ``shifts`` optionally holds one constant
    array per feature layer added to its pre-activations (gradient checks use
    it to keep units away from the ReLU kink).
    """
    x = check_input(model, x).astype(model.dtype, copy=False)
    a = np.ascontiguousarray(x.transpose(1, 0, 2, 3))
    cache = Cache([], [], [])
    last = len(model.layers) - 1
    for i, layer in enumerate(model.layers):
        z, cols = _conv_fwd(a, layer)
        if keep_cache:
            cache.inputs.append(a.shape)
            cache.cols.append(cols)
        if i < last:
            if shifts is not None:
                z = z + shifts[i]
            if keep_cache:
                cache.preacts.append(z)
            a = np.maximum(z, 0)
        else:
            a = z
    fmap = a.transpose(1, 0, 2, 3)
    raw = gap_forward(fmap)
    return raw, fmap, (cache if keep_cache else None)


def backward(model: HENModel, draw, fmap_hw, cache: Cache):
    """Reverse pass from ``dL/draw`` (N, 8); returns grads aligned with ``model.params()``."""
    n = draw.shape[0]
    h, w = fmap_hw
    g = np.broadcast_to((draw.T / (h * w))[:, :, None, None], (draw.shape[1], n, h, w))
    g = np.ascontiguousarray(g, dtype=model.dtype)
    grads = [None] * (2 * len(model.layers))
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        if i < len(model.layers) - 1:
            g = g * (cache.preacts[i] > 0)
        g, dw, db = _conv_bwd(g, cache.cols[i], cache.inputs[i], layer, need_dx=i > 0)
        grads[2 * i] = dw
        grads[2 * i + 1] = db
    return grads


def mse_loss(raw, targets_px, loss_scale):
    t = np.asarray(targets_px, dtype=np.float64) / loss_scale
    diff = raw.astype(np.float64) - t
    loss = float(np.mean(diff * diff))
    draw = (2.0 / diff.size) * diff
    return loss, draw


def loss_and_grads(model: HENModel, x, targets_px, shifts=None):
    raw, fmap, cache = forward_batch(model, x, shifts=shifts, keep_cache=True)
    loss, draw = mse_loss(raw, targets_px, model.loss_scale)
    grads = backward(model, draw.astype(model.dtype), fmap.shape[2:], cache)
    return loss, grads


def forward(model: HENModel, inp):
    """Single (2, H, W) input -> (offsets in pixels (8,), pre-GAP maps (8, h, w))."""
    inp = np.asarray(inp)
    if inp.ndim != 3:
        raise ShapeMismatch(f"expected (C, H, W) input, got {inp.shape}")
    raw, fmap, _ = forward_batch(model, inp[None])
    return raw[0].astype(np.float64) * model.loss_scale, fmap[0]


def predict(model: HENModel, x, batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Batched inference; returns (pixel offsets (N, 8), maps (N, 8, h, w))."""
    x = np.asarray(x)
    preds, maps = [], []
    for i in range(0, len(x), batch_size):
        raw, fmap, _ = forward_batch(model, x[i:i + batch_size])
        preds.append(raw.astype(np.float64) * model.loss_scale)
        maps.append(fmap)
    return np.concatenate(preds), np.concatenate(maps)
