"""Versioned binary checkpoints: named tensors with shape headers.

Layout (little-endian):

    magic   4 bytes  b"EVTK"
    version u32      format version (currently 1)
    n_meta  u32      string metadata entries (key/value, u16-length UTF-8)
    n_arr   u32      tensor entries
    entry:  u16 name length, name UTF-8, u8 dtype code, u8 ndim,
            u32 per-dim sizes, raw C-order bytes

Truncated files, unknown dtype codes, or version mismatches raise
:class:`CheckpointError`.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import CheckpointError

MAGIC = b"EVTK"
VERSION = 1
_DTYPES = {0: np.float32, 1: np.float64, 2: np.int64}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


def save_checkpoint(path: str, arrays: dict, meta: dict | None = None) -> None:
    meta = meta or {}
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", VERSION, len(meta), len(arrays)))
        for key, value in meta.items():
            kb = str(key).encode("utf-8")
            vb = str(value).encode("utf-8")
            fh.write(struct.pack("<H", len(kb)))
            fh.write(kb)
            fh.write(struct.pack("<H", len(vb)))
            fh.write(vb)
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            if arr.dtype not in _CODES:
                arr = arr.astype(np.float32)
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("checkpoint file is truncated")
    return buf


def load_checkpoint(path: str) -> tuple[dict, dict]:
    """Returns (arrays, meta)."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        version, n_meta, n_arr = struct.unpack("<III", _read_exact(fh, 12))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        meta = {}
        for _ in range(n_meta):
            (klen,) = struct.unpack("<H", _read_exact(fh, 2))
            key = _read_exact(fh, klen).decode("utf-8")
            (vlen,) = struct.unpack("<H", _read_exact(fh, 2))
            meta[key] = _read_exact(fh, vlen).decode("utf-8")
        arrays = {}
        for _ in range(n_arr):
            (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, nlen).decode("utf-8")
            code, ndim = struct.unpack("<BB", _read_exact(fh, 2))
            if code not in _DTYPES:
                raise CheckpointError(f"unknown dtype code {code}")
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
            dtype = np.dtype(_DTYPES[code])
            count = int(np.prod(shape)) if ndim else 1
            raw = _read_exact(fh, count * dtype.itemsize)
            arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        if fh.read(1):
            raise CheckpointError("trailing bytes after checkpoint payload")
    return arrays, meta
