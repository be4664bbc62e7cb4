"""RDGV1 weights container.

Layout: ``RDGV1\\n``; ``key=value`` config lines ended by a blank line; then
per tensor a name line, a ``rank d1 d2 ...`` line and little-endian float32
data; finally the 64-bit FNV-1a hash of everything before it, little-endian.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import ChecksumFailure, ShapeMismatch, VersionMismatch
from .model import NetworkConfig, NetworkParams, expected_shapes

MAGIC = b"RDGV1\n"
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash (byte-serial by construction)."""
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK
    return h


def save_weights(params: NetworkParams, config: NetworkConfig) -> bytes:
    parts = [MAGIC]
    for key, value in config.to_dict().items():
        parts.append(f"{key}={value}\n".encode("ascii"))
    parts.append(b"\n")
    for name, arr in params.tensors().items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(f"{name}\n".encode("ascii"))
        parts.append((" ".join(str(d) for d in (arr.ndim, *arr.shape)) + "\n").encode("ascii"))
        parts.append(arr.tobytes())
    payload = b"".join(parts)
    return payload + struct.pack("<Q", fnv1a64(payload))


def _readline(buf: bytes, pos: int) -> tuple[str, int]:
    end = buf.find(b"\n", pos)
    if end < 0:
        raise ShapeMismatch("truncated weights file")
    return buf[pos:end].decode("ascii"), end + 1


def load_weights(data: bytes) -> tuple[NetworkParams, NetworkConfig]:
    if not data.startswith(MAGIC):
        raise VersionMismatch(f"expected magic {MAGIC!r}, got {data[:6]!r}")
    if len(data) < len(MAGIC) + 8:
        raise ChecksumFailure("file too short to hold a checksum")
    payload, trailer = data[:-8], data[-8:]
    if struct.unpack("<Q", trailer)[0] != fnv1a64(payload):
        raise ChecksumFailure("checksum mismatch")

    pos = len(MAGIC)
    meta = {}
    while True:
        line, pos = _readline(payload, pos)
        if line == "":
            break
        key, _, value = line.partition("=")
        meta[key] = value
    try:
        config = NetworkConfig.from_dict(meta)
    except (TypeError, ValueError) as exc:
        raise ShapeMismatch(f"invalid config block: {exc}") from exc

    want = expected_shapes(config)
    tensors = {}
    while pos < len(payload):
        name, pos = _readline(payload, pos)
        dims_line, pos = _readline(payload, pos)
        dims = [int(t) for t in dims_line.split()]
        if not dims or dims[0] != len(dims) - 1:
            raise ShapeMismatch(f"bad dimension line for {name}: {dims_line!r}")
        shape = tuple(dims[1:])
        count = int(np.prod(shape, dtype=np.int64))
        end = pos + 4 * count
        if end > len(payload):
            raise ShapeMismatch(f"tensor {name} truncated")
        tensors[name] = np.frombuffer(payload[pos:end], dtype="<f4").reshape(shape).astype(np.float32)
        pos = end

    if set(tensors) != set(want):
        raise ShapeMismatch(
            f"tensor names differ from config: missing {sorted(set(want) - set(tensors))}, "
            f"unexpected {sorted(set(tensors) - set(want))}"
        )
    for name, shape in want.items():
        if tensors[name].shape != shape:
            raise ShapeMismatch(f"{name}: header implies {shape}, file has {tensors[name].shape}")
    state_keys = {k for k in want if k.endswith(("/bn_mean", "/bn_var"))}
    params = NetworkParams(
        {k: tensors[k] for k in want if k not in state_keys},
        {k: tensors[k] for k in want if k in state_keys},
    )
    return params, config
