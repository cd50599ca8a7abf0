"""Weight files and training checkpoints.

Weight file layout, all integers little-endian ``u32``::

    b"HEN1" | version | layer count
    per layer: in, out, stride, weights (out, in, ky, kx) f32, biases f32
    CRC32 of every preceding byte
"""

from __future__ import annotations

import json
import os
import struct
import zlib

import numpy as np

from ..errors import ChecksumMismatch, FormatVersionMismatch
from .core import ConvLayer, HENModel
from .train import OptState

MAGIC = b"HEN1"
VERSION = 1


def weights_bytes(model: HENModel) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(model.layers))]
    for layer in model.layers:
        parts.append(struct.pack("<III", layer.in_channels, layer.out_channels, layer.stride))
        parts.append(np.ascontiguousarray(layer.weight, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())
    payload = b"".join(parts)
    return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def _atomic_write(path, data: bytes):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def save_weights(model: HENModel, path) -> None:
    _atomic_write(path, weights_bytes(model))


def parse_weights(data: bytes, loss_scale: float = 32.0, input_size: int | None = None) -> HENModel:
    if len(data) < 16 or data[:4] != MAGIC:
        raise FormatVersionMismatch("not a HEN1 weight file")
    version, n_layers = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise FormatVersionMismatch(f"weight format version {version}, expected {VERSION}")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != crc:
        raise ChecksumMismatch("weight file checksum mismatch (truncated or corrupt)")
    off = 12
    layers = []
    end = len(data) - 4
    for _ in range(n_layers):
        if off + 12 > end:
            raise FormatVersionMismatch("layer table runs past end of file")
        c_in, c_out, stride = struct.unpack_from("<III", data, off)
        off += 12
        nw = c_out * c_in * 9
        if off + 4 * (nw + c_out) > end:
            raise FormatVersionMismatch("layer data runs past end of file")
        w = np.frombuffer(data, dtype="<f4", count=nw, offset=off).reshape(c_out, c_in, 3, 3)
        off += 4 * nw
        b = np.frombuffer(data, dtype="<f4", count=c_out, offset=off)
        off += 4 * c_out
        layers.append(ConvLayer(w.astype(np.float32), b.astype(np.float32), int(stride)))
    if off != end:
        raise FormatVersionMismatch("trailing bytes after layer data")
    return HENModel(layers, float(loss_scale), input_size)


def load_weights(path, loss_scale: float = 32.0, input_size: int | None = None) -> HENModel:
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_weights(data, loss_scale, input_size)


def save_checkpoint(prefix, model: HENModel, opt_state: OptState, step: int) -> None:
    """``prefix.hen`` (weights), ``prefix.opt.npz`` (moments) and ``prefix.json``."""
    save_weights(model, f"{prefix}.hen")
    tmp = f"{prefix}.opt.tmp.npz"
    np.savez(tmp, **opt_state.arrays())
    os.replace(tmp, f"{prefix}.opt.npz")
    _atomic_write(f"{prefix}.json", json.dumps({"step": step, "optimizer": opt_state.kind}).encode())


def load_checkpoint(prefix, loss_scale: float, input_size: int | None = None):
    """Returns ``(model, opt_state, next_step)``."""
    model = load_weights(f"{prefix}.hen", loss_scale, input_size)
    with open(f"{prefix}.json") as fh:
        meta = json.load(fh)
    with np.load(f"{prefix}.opt.npz") as z:
        state = OptState.from_arrays(meta["optimizer"], {k: z[k] for k in z.files})
    return model, state, int(meta["step"]) + 1
