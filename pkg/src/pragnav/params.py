"""Named parameter sets, deterministic initialization, checkpoint format."""

from __future__ import annotations

import io
import json
import struct
import zlib

import numpy as np

from .autodiff import Tensor

CKPT_MAGIC = b"PNAVCKPT"
CKPT_VERSION = 1

INIT_SCALE = 0.1


def _name_rng(seed, name):
    # order-independent: each parameter's stream depends only on (seed, name)
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


def init_param(seed, name, shape, dtype):
    rng = _name_rng(seed, name)
    data = rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape).astype(dtype)
    return Tensor(np.ascontiguousarray(data), requires_grad=True)


def init_lstm(seed, prefix, input_size, hidden_size, dtype):
    """LSTM weights (4H x (I+H)) and bias with the forget gate bias at 1.0."""
    W = init_param(seed, f"{prefix}.W", (4 * hidden_size, input_size + hidden_size), dtype)
    b = init_param(seed, f"{prefix}.b", (4 * hidden_size,), dtype)
    b.data[hidden_size:2 * hidden_size] = 1.0
    return {f"{prefix}.W": W, f"{prefix}.b": b}


def as_arrays(params):
    return {name: t.data for name, t in params.items()}


def clone_params(params):
    return {name: Tensor(t.data.copy(), requires_grad=True) for name, t in params.items()}


def save_checkpoint(path, kind, hyper, params):
    """Versioned binary container: header JSON, then ordered (name, shape,
    float32 values) records.  Round-trips byte-exactly."""
    header = json.dumps(
        {"format_version": CKPT_VERSION, "kind": kind, "hyper": hyper},
        sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    buf.write(struct.pack("<I", len(params)))
    for name, t in params.items():
        blob = name.encode()
        data = np.ascontiguousarray(t.data, dtype=np.float32)
        buf.write(struct.pack("<H", len(blob)))
        buf.write(blob)
        buf.write(struct.pack("<B", data.ndim))
        buf.write(struct.pack(f"<{data.ndim}I", *data.shape))
        buf.write(data.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path, dtype=np.float32):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    off = 8
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    header = json.loads(raw[off:off + hlen].decode())
    off += hlen
    if header.get("format_version") != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('format_version')!r}")
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        params[name] = Tensor(np.ascontiguousarray(data.astype(dtype)), requires_grad=True)
    return header["kind"], header["hyper"], params
