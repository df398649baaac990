"""PTAG binary tag files: magic b"PTAG", u16 version, u8 channel, u64 count, u64 LE timestamps (ps)."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .io import atomic_write_bytes, write_json
from .source import TagStream

MAGIC = b"PTAG"
VERSION = 1
_HEADER = struct.Struct("<4sHBQ")


class PtagFormatError(ValueError):
    pass


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_ptag(path, stream: TagStream) -> None:
    t = stream.timestamps
    header = _HEADER.pack(MAGIC, VERSION, stream.channel_id, t.size)
    atomic_write_bytes(path, header + t.astype("<u8").tobytes())
    meta = dict(stream.metadata)
    meta.update(channel_id=stream.channel_id, duration_s=stream.duration, count=int(t.size))
    write_json(sidecar_path(path), meta)


def read_ptag(path) -> TagStream:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise PtagFormatError(f"{path}: truncated header")
    magic, version, channel, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise PtagFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise PtagFormatError(f"{path}: unsupported version {version}")
    body = raw[_HEADER.size:]
    if len(body) != 8 * count:
        raise PtagFormatError(f"{path}: expected {count} timestamps, found {len(body) // 8}")
    t = np.frombuffer(body, dtype="<u8").astype(np.int64)
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
    duration = meta.pop("duration_s", None)
    if duration is None:
        duration = (int(t[-1]) + 1) / 1e12 if t.size else 0.0
    meta.pop("channel_id", None)
    meta.pop("count", None)
    return TagStream(channel, t, duration, meta)
