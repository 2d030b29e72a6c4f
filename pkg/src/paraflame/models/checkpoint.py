"""Binary checkpoint container for operator networks.

Layout (little-endian): ``b"PFCK"`` | version u32 | kind u8 | spec JSON
(u32 length + UTF-8) | parameter count u32 | parameter blobs | extra-array
count u32 | extra blobs | metadata JSON (u32 length + UTF-8).

A blob is: name length u16, name bytes, dtype flag u8 (0 real, 1 complex),
ndim u8, shape as u32 each, then float64 data (complex values as interleaved
real/imaginary pairs). Extra arrays carry optimizer state for resuming.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dataset import FormatError, atomic_write
from .base import OperatorNet
from .embedding import ParamEmbedding
from .pcnn import PCNN, PcnnSpec
from .pfno import PFNO, PFNOStar, PfnoSpec

__all__ = ["Checkpoint", "save_checkpoint", "load_checkpoint", "build_model", "MODEL_KINDS"]

MAGIC = b"PFCK"
VERSION = 1
MODEL_KINDS = {"pfno": (0, PFNO, PfnoSpec), "pfno_star": (1, PFNOStar, PfnoSpec),
               "pcnn": (2, PCNN, PcnnSpec)}
_KIND_BY_TAG = {tag: kind for kind, (tag, _, _) in MODEL_KINDS.items()}


def build_model(kind: str, spec: dict | None = None, embedding: dict | None = None,
                seed: int = 0) -> OperatorNet:
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {sorted(MODEL_KINDS)}")
    _, cls, spec_cls = MODEL_KINDS[kind]
    emb = ParamEmbedding(**embedding) if embedding else None
    return cls(spec_cls(**(spec or {})), emb, seed=seed)


@dataclass
class Checkpoint:
    model: OperatorNet
    meta: dict = field(default_factory=dict)
    extra: dict[str, np.ndarray] = field(default_factory=dict)


def _blob(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    is_complex = np.iscomplexobj(arr)
    raw = name.encode()
    data = arr.astype("<c16" if is_complex else "<f8", copy=False).tobytes()
    return b"".join([struct.pack("<H", len(raw)), raw,
                     struct.pack("<BB", int(is_complex), arr.ndim),
                     struct.pack(f"<{arr.ndim}I", *arr.shape), data])


def _text(payload) -> bytes:
    raw = json.dumps(payload, sort_keys=True).encode()
    return struct.pack("<I", len(raw)) + raw


def encode(ckpt: Checkpoint) -> bytes:
    m = ckpt.model
    parts = [struct.pack("<4sIB", MAGIC, VERSION, MODEL_KINDS[m.kind][0]), _text(m.spec_dict()),
             struct.pack("<I", len(m.params))]
    parts += [_blob(k, p.data) for k, p in m.params.items()]
    parts.append(struct.pack("<I", len(ckpt.extra)))
    parts += [_blob(k, v) for k, v in ckpt.extra.items()]
    parts.append(_text(ckpt.meta))
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.off = buf, 0

    def take(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        if self.off + size > len(self.buf):
            raise FormatError(f"truncated {what}", self.off)
        out = struct.unpack_from(fmt, self.buf, self.off)
        self.off += size
        return out

    def raw(self, size: int, what: str) -> bytes:
        if self.off + size > len(self.buf):
            raise FormatError(f"truncated {what}", self.off)
        out = self.buf[self.off: self.off + size]
        self.off += size
        return out

    def text(self, what: str):
        start = self.off
        (size,) = self.take("<I", what)
        try:
            return json.loads(self.raw(size, what).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"malformed {what}: {exc}", start) from None

    def blob(self):
        (size,) = self.take("<H", "blob name")
        name = self.raw(size, "blob name").decode()
        is_complex, ndim = self.take("<BB", "blob header")
        shape = self.take(f"<{ndim}I", "blob shape")
        count = int(np.prod(shape, dtype=np.int64))
        dtype = "<c16" if is_complex else "<f8"
        data = self.raw(count * np.dtype(dtype).itemsize, f"data of {name}")
        return name, np.frombuffer(data, dtype=dtype).reshape(shape).copy()


def decode(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    magic, version, tag = r.take("<4sIB", "header")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if tag not in _KIND_BY_TAG:
        raise FormatError(f"unknown model kind tag {tag}", 8)
    spec = r.text("spec")
    (count,) = r.take("<I", "parameter count")
    state = dict(r.blob() for _ in range(count))
    (n_extra,) = r.take("<I", "extra count")
    extra = dict(r.blob() for _ in range(n_extra))
    meta = r.text("metadata")
    if r.off != len(buf):
        raise FormatError(f"{len(buf) - r.off} trailing bytes", r.off)
    model = build_model(_KIND_BY_TAG[tag], spec["spec"], spec["embedding"])
    model.load_state_dict(state)
    return Checkpoint(model, meta, extra)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    atomic_write(path, encode(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return decode(Path(path).read_bytes())
