"""Dense float64 tensor helpers and seeded random streams.

Tensors are plain ``numpy.ndarray`` objects in C (row-major) order with dtype
float64.  The helpers here add the shape checks the rest of the package
relies on.
"""
from __future__ import annotations

import zlib

import numpy as np

DTYPE = np.float64

_ELEMENTWISE = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def as_tensor(data, shape=None) -> np.ndarray:
    """Return ``data`` as a contiguous float64 array, optionally reshaped."""
    t = np.ascontiguousarray(data, dtype=DTYPE)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise ValueError(f"shape extents must be positive, got {shape}")
        if int(np.prod(shape)) != t.size:
            raise ValueError(f"cannot view {t.size} values as shape {shape}")
        t = t.reshape(shape)
    return t


def elementwise(op_tag: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        op = _ELEMENTWISE[op_tag]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op_tag!r}") from None
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return op(a, b)


def frobenius_norm_sq(t: np.ndarray) -> float:
    t = np.asarray(t, dtype=DTYPE).ravel()
    return float(np.dot(t, t))


def sign(t: np.ndarray) -> np.ndarray:
    # np.sign maps 0 -> 0, which the PGD step relies on
    return np.sign(np.asarray(t, dtype=DTYPE))


def clamp(t: np.ndarray, lo, hi) -> np.ndarray:
    if np.any(np.asarray(lo) > np.asarray(hi)):
        raise ValueError("clamp requires lo <= hi")
    return np.clip(np.asarray(t, dtype=DTYPE), lo, hi)


def flat_index(shape, coord) -> int:
    """Row-major flat offset of ``coord`` inside ``shape``."""
    idx = 0
    for extent, c in zip(shape, coord):
        if not 0 <= c < extent:
            raise IndexError(f"coordinate {tuple(coord)} outside shape {tuple(shape)}")
        idx = idx * extent + c
    return idx


def unflat_index(shape, idx: int) -> tuple:
    if not 0 <= idx < int(np.prod(shape)):
        raise IndexError(f"flat index {idx} outside shape {tuple(shape)}")
    coord = []
    for extent in reversed(shape):
        idx, c = divmod(idx, extent)
        coord.append(c)
    return tuple(reversed(coord))


def make_rng(seed: int, purpose: str = "", *keys: int) -> np.random.Generator:
    """Counter-based (Philox) generator for one named substream.

    ``purpose`` separates independent uses of the same experiment seed, e.g.
    ``"init"``, ``"shuffle"`` or ``"pgd"``; extra integer ``keys`` split it
    further (per epoch, per grid cell, ...).
    """
    tag = zlib.crc32(purpose.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(tag, *map(int, keys)))
    return np.random.Generator(np.random.Philox(ss))
