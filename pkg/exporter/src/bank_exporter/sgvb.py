"""Standalone SGVB writer, implemented against the format document
(FORMAT.md in the consumer repository). Deliberately independent of the
consumer's own serialization code so the byte format stays the contract."""
from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"SGVB"
VERSION = 1
_HEADER = struct.Struct("<4sHI")


def write_bank(path, *, dims: dict, temperature: float, classes: list[dict],
               sample_ids: list[str], sample_classes: list[int],
               sample_roles: list[str] | None,
               class_embeddings: np.ndarray, samples: np.ndarray,
               visual_proj: np.ndarray, class_text_embeddings: np.ndarray) -> None:
    """Write a precomputed-text-mode bank.

    Tensor order per the format document: class_embeddings, samples,
    visual_proj, class_text_embeddings. All payloads are widened to
    float64 little-endian, row-major.
    """
    tensors = [
        ("class_embeddings", np.ascontiguousarray(class_embeddings, dtype=np.float64)),
        ("samples", np.ascontiguousarray(samples, dtype=np.float64)),
        ("visual_proj", np.ascontiguousarray(visual_proj, dtype=np.float64)),
        ("class_text_embeddings",
         np.ascontiguousarray(class_text_embeddings, dtype=np.float64)),
    ]
    meta = {
        "dims": dims,
        "temperature": float(temperature),
        "classes": classes,
        "sample_ids": sample_ids,
        "sample_classes": [int(c) for c in sample_classes],
        "sample_roles": sample_roles,
        "text_mode": "precomputed",
        "stub": None,
        "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in tensors],
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for _, arr in tensors:
            fh.write(arr.astype("<f8", copy=False).tobytes(order="C"))
