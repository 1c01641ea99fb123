"""Writers for the alignment engine's binary file contracts.

Two little-endian layouts are produced here:

* feature maps: ``DFM1`` | u32 H, W, C | H*W*C float32, row-major
  location-then-channel;
* embedding banks: ``EBK1`` | u32 D, C | D x (u16 name length, UTF-8 name,
  u8 kind 0=thing 1=stuff) | D*C float32.

Files are written atomically (temp file in the target directory, then
rename) so a crashed export never leaves a truncated artifact behind.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"DFM1"
BANK_MAGIC = b"EBK1"

KIND_THING = 0
KIND_STUFF = 1

MIN_EMBEDDING_NORM = 1e-8


class ExportError(ValueError):
    """Invalid payload that must not reach disk."""


def _atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def write_feature_file(path, features: np.ndarray) -> None:
    """Write an H x W x C map; values are stored as binary32."""
    arr = np.asarray(features)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ExportError(f"feature map must be H x W x C, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ExportError("feature map contains non-finite values")
    height, width, channels = arr.shape
    header = FEATURE_MAGIC + struct.pack("<III", height, width, channels)
    _atomic_write(path, header + np.ascontiguousarray(arr, dtype="<f4").tobytes())


def write_bank_file(path, names, kinds, embeddings: np.ndarray) -> None:
    """Write D category embeddings with their thing/stuff flags.

    Names must be unique and non-empty; every embedding norm must clear the
    engine's 1e-8 floor. Both are checked before any bytes are written.
    """
    arr = np.asarray(embeddings)
    if arr.ndim != 2 or len(names) != arr.shape[0] or len(kinds) != arr.shape[0]:
        raise ExportError(
            f"bank sizes disagree: {len(names)} names, {len(kinds)} kinds, shape {arr.shape}"
        )
    if any(not name for name in names):
        raise ExportError("category names must be non-empty")
    if len(set(names)) != len(names):
        raise ExportError("category names must be unique")
    if any(kind not in (KIND_THING, KIND_STUFF) for kind in kinds):
        raise ExportError("kinds must be 0 (thing) or 1 (stuff)")
    if not np.all(np.isfinite(arr)):
        raise ExportError("embeddings contain non-finite values")
    as_f32 = arr.astype(np.float32)
    norms = np.linalg.norm(as_f32.astype(np.float64), axis=1)
    if np.any(norms <= MIN_EMBEDDING_NORM):
        bad = int(np.argmin(norms))
        raise ExportError(f"embedding for '{names[bad]}' has near-zero norm {norms[bad]:.3g}")

    out = [BANK_MAGIC, struct.pack("<II", arr.shape[0], arr.shape[1])]
    for name, kind in zip(names, kinds):
        encoded = name.encode("utf-8")
        out.append(struct.pack("<H", len(encoded)))
        out.append(encoded)
        out.append(struct.pack("<B", kind))
    out.append(np.ascontiguousarray(as_f32, dtype="<f4").tobytes())
    _atomic_write(path, b"".join(out))
