"""Binary tensor container shared by bank files and checkpoints.

Layout (all integers little-endian):

    magic    4 bytes (ASCII tag, e.g. b"SGVB" or b"SGVP")
    version  u16
    meta_len u32
    meta     meta_len bytes of UTF-8 JSON (canonical: sorted keys, compact)
    tensors  concatenated raw float64 little-endian payloads, row-major,
             in the exact order of meta["tensors"] (a list of {name, shape})

The metadata block is self-describing: readers take shapes from the manifest
rather than assuming them. Canonical JSON plus raw f64 makes two saves of the
same object byte-identical and round-trips lossless.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, IoError, ValidationError

_HEADER = struct.Struct("<4sHI")


def canonical_json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("utf-8")


def write_container(path, magic: bytes, version: int, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    """Write a container file. ``meta`` must not already contain "tensors"."""
    if len(magic) != 4:
        raise ValueError("magic must be exactly 4 bytes")
    manifest = []
    payloads = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        manifest.append({"name": name, "shape": list(arr.shape)})
        payloads.append(arr)
    meta = dict(meta)
    meta["tensors"] = manifest
    meta_bytes = canonical_json_bytes(meta)
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(magic, version, len(meta_bytes)))
            fh.write(meta_bytes)
            for arr in payloads:
                fh.write(arr.astype("<f8", copy=False).tobytes(order="C"))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_container(path, magic: bytes) -> tuple[int, dict, dict[str, np.ndarray]]:
    """Read a container file, returning (version, meta, tensors by name)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than header")
    got_magic, version, meta_len = _HEADER.unpack_from(raw, 0)
    if got_magic != magic:
        raise FormatError(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
    off = _HEADER.size
    if len(raw) < off + meta_len:
        raise FormatError(f"{path}: truncated metadata block")
    try:
        meta = json.loads(raw[off:off + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: metadata is not valid JSON: {exc}") from exc
    off += meta_len
    manifest = meta.get("tensors")
    if not isinstance(manifest, list):
        raise FormatError(f"{path}: metadata missing tensor manifest")
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest:
        name, shape = entry.get("name"), entry.get("shape")
        if not isinstance(name, str) or not isinstance(shape, list):
            raise FormatError(f"{path}: malformed manifest entry {entry!r}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 8
        if len(raw) < off + nbytes:
            raise FormatError(f"{path}: truncated tensor payload for '{name}'")
        arr = np.frombuffer(raw[off:off + nbytes], dtype="<f8").reshape(shape)
        tensors[name] = arr.astype(np.float64)  # own writable copy
        off += nbytes
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes after tensors")
    return version, meta, tensors


def require_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: contains non-finite values")
