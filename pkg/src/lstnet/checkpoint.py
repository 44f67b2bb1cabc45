"""Binary checkpoint format for named tensors with Adam state.

Layout (little-endian)::

    b"LSTN" | u32 version | u32 n | n bytes UTF-8 JSON header
    then per entry:
    u32 n | name | u8 dtype code | u8 ndim | ndim x u32 dims
    | value bytes | m bytes | v bytes | u64 t

The header carries the build configuration (including the padding
assignment), the step counter, data-stream positions and the entry count.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"LSTN"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


class CheckpointError(ValueError):
    pass


@dataclass
class Entry:
    name: str
    value: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def dumps(header: dict, entries: list[Entry]) -> bytes:
    header = dict(header, n_entries=len(entries))
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(blob)))
    buf.write(blob)
    for e in entries:
        name = e.name.encode("utf-8")
        value = np.ascontiguousarray(e.value)
        code = _CODES.get(value.dtype)
        if code is None:
            raise CheckpointError(f"unsupported dtype {value.dtype} for {e.name}")
        dt = _DTYPES[code]
        buf.write(struct.pack("<I", len(name)))
        buf.write(name)
        buf.write(struct.pack("<BB", code, value.ndim))
        buf.write(struct.pack(f"<{value.ndim}I", *value.shape))
        for arr in (value, e.m, e.v):
            arr = np.asarray(arr)
            if arr.shape != value.shape:
                raise CheckpointError(f"moment shape {arr.shape} differs from value shape {value.shape} for {e.name}")
            buf.write(arr.astype(dt).tobytes())
        buf.write(struct.pack("<Q", int(e.t)))
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data, self.pos, self.source = data, 0, source

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.source}: truncated at byte offset {self.pos} while reading {what} ({n} bytes needed, {len(self.data) - self.pos} left)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads(data: bytes, source: str = "<bytes>") -> tuple[dict, list[Entry]]:
    r = _Reader(data, source)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"{source}: bad magic {magic!r} at byte offset 0, expected {MAGIC!r}")
    version, n = r.unpack("<II", "version and header length")
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version} (this build reads {VERSION})")
    start = r.pos
    try:
        header = json.loads(r.take(n, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: corrupt header at byte offset {start}: {exc}") from None
    entries = []
    for _ in range(int(header.get("n_entries", 0))):
        offset = r.pos
        (name_len,) = r.unpack("<I", "name length")
        name = r.take(name_len, "name").decode("utf-8", errors="replace")
        code, ndim = r.unpack("<BB", f"dtype of {name}")
        if code not in _DTYPES:
            raise CheckpointError(f"{source}: unknown dtype code {code} for {name} at byte offset {offset}")
        dims = r.unpack(f"<{ndim}I", f"dims of {name}")
        dt = _DTYPES[code]
        size = int(np.prod(dims)) * dt.itemsize
        arrays = [np.frombuffer(r.take(size, f"{part} of {name}"), dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
                  for part in ("value", "m", "v")]
        (t,) = r.unpack("<Q", f"step counter of {name}")
        entries.append(Entry(name, *arrays, t))
    if r.pos != len(data):
        raise CheckpointError(f"{source}: {len(data) - r.pos} trailing bytes at byte offset {r.pos}")
    return header, entries


def save(path, header: dict, entries: list[Entry]) -> None:
    Path(path).write_bytes(dumps(header, entries))


def load(path) -> tuple[dict, list[Entry]]:
    return loads(Path(path).read_bytes(), str(path))


def model_entries(model) -> list[Entry]:
    """Parameters (with Adam state) followed by batch-norm running statistics."""
    entries = [Entry(p.name, p.data, p.m, p.v, p.t) for p in model.store]
    for name, buf in model.store.buffers.items():
        zeros = np.zeros_like(buf)
        entries.append(Entry(name, buf, zeros, zeros, 0))
    return entries


def restore_model(model, entries: list[Entry]) -> None:
    by_name = {e.name: e for e in entries}
    expected = set(model.store.names()) | set(model.store.buffers)
    if set(by_name) != expected:
        missing = sorted(expected - set(by_name))[:5]
        extra = sorted(set(by_name) - expected)[:5]
        raise CheckpointError(f"checkpoint tensors do not match the model (missing {missing}, unexpected {extra})")
    for p in model.store:
        e = by_name[p.name]
        if e.value.shape != p.shape:
            raise CheckpointError(f"{p.name}: checkpoint shape {e.value.shape} != model shape {p.shape}")
        p.data[...] = e.value
        p.m[...] = e.m
        p.v[...] = e.v
        p.t = int(e.t)
        p.zero_grad()
    for name, buf in model.store.buffers.items():
        buf[...] = by_name[name].value
