"""Binary checkpoint format.

Layout (all integers unsigned 64-bit little-endian)::

    b"AGCK1"
    config_len, config text (UTF-8 ``key = json-value`` lines)
    repeated until EOF:
        name_len, name (UTF-8), rank, extents[rank], values (float64 LE)
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .exceptions import CheckpointDimensionError, CheckpointError, MagicMismatchError, TruncatedCheckpointError
from .layers import Module

MAGIC = b"AGCK1"
_U64 = struct.Struct("<Q")


def _config_text(config: dict) -> str:
    return "".join(f"{k} = {json.dumps(v)}\n" for k, v in config.items())


def _parse_config(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if line.strip():
            key, value = line.split(" = ", 1)
            out[key] = json.loads(value)
    return out


def encode_checkpoint(net: Module) -> bytes:
    parts = [MAGIC]
    cfg = _config_text(net.config).encode("utf-8")
    parts += [_U64.pack(len(cfg)), cfg]
    for name, p in net.named_parameters():
        raw = name.encode("utf-8")
        parts += [_U64.pack(len(raw)), raw, _U64.pack(p.data.ndim)]
        parts += [_U64.pack(n) for n in p.data.shape]
        parts.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(net: Module, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(net))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedCheckpointError(f"checkpoint truncated at byte {len(self.buf)}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    @property
    def done(self) -> bool:
        return self.pos >= len(self.buf)


def decode_checkpoint(buf: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse raw bytes into ``(config, {name: array})``."""
    if buf[: len(MAGIC)] != MAGIC:
        raise MagicMismatchError(f"bad magic {buf[:len(MAGIC)]!r}, expected {MAGIC!r}")
    r = _Reader(buf)
    r.take(len(MAGIC))
    config = _parse_config(r.take(r.u64()).decode("utf-8"))
    arrays = {}
    while not r.done:
        name = r.take(r.u64()).decode("utf-8")
        rank = r.u64()
        if rank > 8:
            raise CheckpointError(f"implausible rank {rank} for {name}")
        shape = tuple(r.u64() for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
    return config, arrays


def load_checkpoint(path, net: Module | None = None) -> Module:
    """Load weights into ``net``, or into a network rebuilt from the stored config."""
    from .models import build_model

    with open(path, "rb") as fh:
        config, arrays = decode_checkpoint(fh.read())
    if net is None:
        net = build_model(config)
    params = dict(net.named_parameters())
    missing = sorted(set(params) - set(arrays))
    extra = sorted(set(arrays) - set(params))
    if missing or extra:
        raise CheckpointError(f"parameter names differ: missing {missing}, unexpected {extra}")
    for name, p in params.items():
        if arrays[name].shape != p.data.shape:
            raise CheckpointDimensionError(
                f"layer {name}: checkpoint shape {arrays[name].shape} vs network shape {p.data.shape}"
            )
    for name, p in params.items():
        p.data[...] = arrays[name]
    net.config = dict(config) if config else net.config
    return net
