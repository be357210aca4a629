"""Portable checkpoint files.

Layout::

    offset 0   8 bytes   magic b"RPCKPT01"
    offset 8   8 bytes   header length H, unsigned little-endian
    offset 16  H bytes   UTF-8 JSON header
    offset 16+H          tensor payloads, raw little-endian float64, in the
                         order listed by header["tensors"] then header["masks"]

The header holds ``spec`` (the NetworkSpec as a dict), ``tensors`` and
``masks`` (lists of ``{"name", "shape"}``) and free-form ``metadata``.
Masks are stored as 0.0/1.0 float64 like every other payload.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from robustprune.nn.network import Model, NetworkSpec

MAGIC = b"RPCKPT01"
_LE_F64 = np.dtype("<f8")


class CheckpointError(ValueError):
    """Malformed checkpoint file; ``offset`` is where parsing failed."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class Checkpoint:
    model: Model
    masks: dict | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def spec(self) -> NetworkSpec:
        return self.model.spec


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    model = ckpt.model
    names = list(model.params)
    masks = ckpt.masks or {}
    header = {
        "spec": model.spec.to_dict(),
        "tensors": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
        "masks": [{"name": n, "shape": list(m.shape)} for n, m in masks.items()],
        "metadata": ckpt.metadata,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for n in names:
            fh.write(np.ascontiguousarray(model.params[n], dtype=_LE_F64).tobytes())
        for m in masks.values():
            fh.write(np.ascontiguousarray(m, dtype=_LE_F64).tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 8 or buf[:8] != MAGIC:
        raise CheckpointError(f"bad magic {buf[:8]!r}, expected {MAGIC!r}", 0)
    if len(buf) < 16:
        raise CheckpointError("truncated header length", 8)
    (hlen,) = struct.unpack_from("<Q", buf, 8)
    if 16 + hlen > len(buf):
        raise CheckpointError(f"header of {hlen} bytes runs past end of file", 16)
    try:
        header = json.loads(buf[16:16 + hlen].decode("utf-8"))
        spec = NetworkSpec.from_dict(header["spec"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CheckpointError(f"unreadable header: {exc}", 16) from None
    off = 16 + hlen

    def take(entries):
        nonlocal off
        out = {}
        for e in entries:
            shape = tuple(e["shape"])
            nbytes = int(np.prod(shape, dtype=np.int64)) * 8
            if off + nbytes > len(buf):
                raise CheckpointError(f"payload for {e['name']!r} truncated", off)
            out[e["name"]] = np.frombuffer(buf, _LE_F64, nbytes // 8, off).astype(np.float64).reshape(shape)
            off += nbytes
        return out

    params = take(header["tensors"])
    masks = take(header.get("masks", []))
    if off != len(buf):
        raise CheckpointError(f"{len(buf) - off} trailing bytes after payload", off)
    model = Model(spec, params).check()
    return Checkpoint(model, masks or None, header.get("metadata", {}))
