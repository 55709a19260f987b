"""Flat named-tensor container shared by checkpoints and embedding files.

Layout::

    u64 little-endian header length N
    N bytes of UTF-8 JSON header
    payload: concatenated little-endian float32 tensors, row-major

The header maps each tensor name to ``{shape, dtype, byte_offset, byte_len}``
(offsets relative to the payload start) plus an optional ``__metadata__``
entry. Names are written in sorted order and the JSON is emitted with
sorted keys and fixed separators, so equal contents give equal bytes.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .errors import ArtifactIOError, ContractError

META_KEY = "__metadata__"
_DTYPE = "f32"
_LE_F32 = np.dtype("<f4")


def _as_f32(name: str, value) -> np.ndarray:
    arr = value.detach().cpu().numpy() if hasattr(value, "detach") else np.asarray(value)
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"tensor {name!r} has non-finite entries")
    # np.array rather than ascontiguousarray: the latter turns 0-d tensors into shape (1,)
    return np.array(arr, dtype=_LE_F32, order="C")


def encode(tensors: Mapping[str, object], metadata: Optional[dict] = None) -> bytes:
    header: dict = {}
    chunks = []
    offset = 0
    for name in sorted(tensors):
        if name == META_KEY:
            raise ContractError(f"{META_KEY!r} is reserved")
        arr = _as_f32(name, tensors[name])
        raw = arr.tobytes(order="C")
        header[name] = {"shape": list(arr.shape), "dtype": _DTYPE, "byte_offset": offset, "byte_len": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    if metadata is not None:
        header[META_KEY] = metadata
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return struct.pack("<Q", len(head)) + head + b"".join(chunks)


def decode(blob: bytes, source="<bytes>") -> tuple[dict[str, np.ndarray], dict]:
    if len(blob) < 8:
        raise ArtifactIOError("truncated container (no header length)", source)
    (n,) = struct.unpack("<Q", blob[:8])
    if 8 + n > len(blob):
        raise ArtifactIOError("truncated container header", source)
    try:
        header = json.loads(blob[8 : 8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArtifactIOError(f"corrupt container header ({exc})", source) from exc
    payload = memoryview(blob)[8 + n :]
    meta = header.pop(META_KEY, {})
    out = {}
    for name, info in header.items():
        if info.get("dtype") != _DTYPE:
            raise ArtifactIOError(f"tensor {name!r} has unsupported dtype {info.get('dtype')!r}", source)
        start, length = info["byte_offset"], info["byte_len"]
        shape = tuple(info["shape"])
        if start + length > len(payload) or length != 4 * int(np.prod(shape, dtype=np.int64)):
            raise ArtifactIOError(f"tensor {name!r} extends past the payload or has a bad length", source)
        out[name] = np.frombuffer(payload[start : start + length], dtype=_LE_F32).reshape(shape).copy()
    return out, meta


def save(path, tensors: Mapping[str, object], metadata: Optional[dict] = None) -> None:
    """Write atomically: a partially written file never replaces a good one."""
    path = Path(path)
    blob = encode(tensors, metadata)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(blob)
        os.replace(tmp, path)
    except OSError as exc:
        raise ArtifactIOError(f"cannot write container ({exc.strerror})", path) from exc


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise ArtifactIOError(f"cannot read container ({exc.strerror})", path) from exc
    return decode(blob, path)
