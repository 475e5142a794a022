"""FTNZ binary tensor files.

Layout: magic ``FTNZ``, u32 version (=1), u8 dtype code (0 = float32),
u8 ndim, ndim x u32 dims, then the row-major little-endian payload.
Round-trips are bit-exact for float32 data.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .errors import ValidationError

MAGIC = b"FTNZ"
VERSION = 1
DTYPE_F32 = 0


def tensor_bytes(data: np.ndarray) -> bytes:
    """Serialize an array (cast to float32) into FTNZ bytes."""
    arr = np.ascontiguousarray(data, dtype="<f4")
    if arr.ndim == 0 or arr.ndim > 255:
        raise ValidationError(f"unsupported ndim {arr.ndim}")
    if any(d > 0xFFFFFFFF for d in arr.shape):
        raise ValidationError("dimension exceeds u32")
    header = MAGIC + struct.pack("<IBB", VERSION, DTYPE_F32, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes()


def write_tensor(path: str | Path, data: np.ndarray) -> None:
    Path(path).write_bytes(tensor_bytes(data))


def tensor_from_bytes(raw: bytes) -> np.ndarray:
    if raw[:4] != MAGIC:
        raise ValidationError("not an FTNZ file (bad magic)")
    version, dtype, ndim = struct.unpack_from("<IBB", raw, 4)
    if version != VERSION:
        raise ValidationError(f"unsupported FTNZ version {version}")
    if dtype != DTYPE_F32:
        raise ValidationError(f"unsupported dtype code {dtype}")
    dims = struct.unpack_from(f"<{ndim}I", raw, 10)
    offset = 10 + 4 * ndim
    count = int(np.prod(dims)) if ndim else 0
    payload = raw[offset:]
    if len(payload) != 4 * count:
        raise ValidationError(
            f"payload length {len(payload)} does not match dims {dims}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


def read_tensor(path: str | Path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


def tensor_digest(data: np.ndarray) -> str:
    """SHA-256 hex digest of the FTNZ serialization; the regression hash."""
    return hashlib.sha256(tensor_bytes(data)).hexdigest()
