"""Binary file formats.

EMB1 (embeddings) and LAT1 (latents) share a layout: 4 magic bytes, three
little-endian uint32 header fields, then little-endian float32 payload, row-major.

    EMB1: rows M, cols d, flags (bit0 = global, requires M == 1)
    LAT1: channels, height, width

Checkpoints (CKP1): magic, uint32 format version, uint32 JSON header length, the
UTF-8 JSON header, then the concatenated float32 tensors listed in the header.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

EMB_MAGIC = b"EMB1"
LAT_MAGIC = b"LAT1"
CKPT_MAGIC = b"CKP1"
CKPT_VERSION = 1
_HEADER = struct.Struct("<4sIII")
_F32 = np.dtype("<f4")


class FormatError(ValueError):
    pass


def _atomic_write(path, blob: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)


def _pack(magic: bytes, dims: tuple[int, int, int], payload: np.ndarray) -> bytes:
    data = np.ascontiguousarray(payload, dtype=_F32)
    return _HEADER.pack(magic, *dims) + data.tobytes()


def _unpack(blob: bytes, magic: bytes, path) -> tuple[tuple[int, int, int], bytes]:
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: file too short for header")
    got, a, b, c = _HEADER.unpack_from(blob)
    if got != magic:
        raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}")
    return (a, b, c), blob[_HEADER.size:]


def write_emb(path, data: np.ndarray, is_global: bool = False) -> None:
    data = np.asarray(data)
    if data.ndim != 2:
        raise FormatError("embedding payload must be 2-D")
    if is_global and data.shape[0] != 1:
        raise FormatError("global embeddings must have exactly one row")
    _atomic_write(path, _pack(EMB_MAGIC, (data.shape[0], data.shape[1], int(is_global)), data))


def read_emb(path) -> tuple[np.ndarray, bool]:
    blob = Path(path).read_bytes()
    (rows, cols, flags), payload = _unpack(blob, EMB_MAGIC, path)
    if flags & ~1:
        raise FormatError(f"{path}: unknown flag bits {flags:#x}")
    is_global = bool(flags & 1)
    if is_global and rows != 1:
        raise FormatError(f"{path}: global flag set but M={rows}")
    if rows == 0 or cols == 0:
        raise FormatError(f"{path}: empty embedding header ({rows}, {cols})")
    if len(payload) != rows * cols * 4:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, header implies {rows * cols * 4}")
    return np.frombuffer(payload, dtype=_F32).reshape(rows, cols).astype(np.float32), is_global


def write_latent(path, latent: np.ndarray) -> None:
    latent = np.asarray(latent)
    if latent.ndim != 3:
        raise FormatError(f"latent must be (C, H, W), got shape {latent.shape}")
    _atomic_write(path, _pack(LAT_MAGIC, latent.shape, latent))


def read_latent(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    (c, h, w), payload = _unpack(blob, LAT_MAGIC, path)
    if len(payload) != c * h * w * 4:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, header implies {c * h * w * 4}")
    out = np.frombuffer(payload, dtype=_F32).reshape(c, h, w).astype(np.float32)
    if not np.all(np.isfinite(out)):
        raise FormatError(f"{path}: non-finite latent values")
    return out


def write_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    """Write named float32 tensors plus a JSON-serializable ``meta`` dict."""
    entries, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=_F32)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True).encode()
    blob = CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(header)) + header + b"".join(chunks)
    _atomic_write(path, blob)


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    if blob[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (magic {blob[:4]!r})")
    version, hlen = struct.unpack_from("<II", blob, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    start = 12 + hlen
    header = json.loads(blob[12:start])
    body = blob[start:]
    tensors = {}
    for e in header["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64)) * 4
        if e["offset"] + n > len(body):
            raise FormatError(f"{path}: tensor {e['name']} runs past end of file")
        chunk = body[e["offset"]:e["offset"] + n]
        tensors[e["name"]] = np.frombuffer(chunk, dtype=_F32).reshape(e["shape"]).copy()
    return tensors, header["meta"]
