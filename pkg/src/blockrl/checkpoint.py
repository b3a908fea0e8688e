"""Self-describing binary checkpoint container.

Layout (all integers little-endian uint32):

    magic "BSML"
    version
    config:   [len][utf-8 text]
    tensors:  [count] then per tensor [name len][name][rank][dims...]
              [float64 little-endian payload]
    blobs:    [count] then per blob [name len][name][len][bytes]

Tensors round-trip bit-exactly; blobs are opaque (RNG states, replay
contents, counters).
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"BSML"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _w_u32(buf, value: int):
    buf.append(struct.pack("<I", value))


def _w_bytes(buf, b: bytes):
    _w_u32(buf, len(b))
    buf.append(b)


def save_checkpoint(path, config_text: str, tensors: dict[str, np.ndarray],
                    blobs: dict[str, bytes]):
    buf: list[bytes] = [MAGIC]
    _w_u32(buf, VERSION)
    _w_bytes(buf, config_text.encode("utf-8"))
    _w_u32(buf, len(tensors))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        _w_bytes(buf, name.encode("utf-8"))
        _w_u32(buf, arr.ndim)
        for dim in arr.shape:
            _w_u32(buf, dim)
        buf.append(arr.astype("<f8").tobytes())
    _w_u32(buf, len(blobs))
    for name, blob in blobs.items():
        _w_bytes(buf, name.encode("utf-8"))
        _w_bytes(buf, blob)
    data = b"".join(buf)
    with open(path, "wb") as f:
        f.write(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def lp_bytes(self) -> bytes:
        return self.take(self.u32())


def load_checkpoint(path) -> tuple[str, dict[str, np.ndarray], dict[str, bytes]]:
    with open(path, "rb") as f:
        r = _Reader(f.read())
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config_text = r.lp_bytes().decode("utf-8")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.lp_bytes().decode("utf-8")
        rank = r.u32()
        shape = tuple(r.u32() for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        payload = r.take(8 * count)
        tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    blobs: dict[str, bytes] = {}
    for _ in range(r.u32()):
        name = r.lp_bytes().decode("utf-8")
        blobs[name] = r.lp_bytes()
    if r.pos != len(r.data):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return config_text, tensors, blobs
