"""
Latent file formats.

Binary LSEQ layout (all little-endian):
    b"LSEQ" | version: u8 | B, L, d: u32 | B*L*d float32 values (row-major)

CSV layout: one row per frame with columns item, frame, c0..c{d-1}.
"""

from pathlib import Path
from typing import Union
import logging
import struct

import numpy as np
import pandas as pd

from latentflow.error_codes import ErrorCode, validation_error, resource_error

logger = logging.getLogger(__name__)

MAGIC = b"LSEQ"
VERSION = 1
_HEADER = struct.Struct("<4sBIII")


def encode_lseq(batch: np.ndarray) -> bytes:
    """Serialize a (B, L, d) array (or a single (L, d) sequence) to LSEQ bytes."""
    arr = np.asarray(batch, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise validation_error(
            ErrorCode.INVALID_ARGUMENT,
            f"LSEQ stores (B, L, d) arrays, got shape {arr.shape}",
            field="batch"
        )
    B, L, d = arr.shape
    header = _HEADER.pack(MAGIC, VERSION, B, L, d)
    return header + arr.astype("<f4").tobytes(order="C")


def decode_lseq(payload: bytes) -> np.ndarray:
    """Parse LSEQ bytes into a float64 (B, L, d) array."""
    if len(payload) < _HEADER.size:
        raise validation_error(ErrorCode.INVALID_FORMAT, "LSEQ payload shorter than its header")
    magic, version, B, L, d = _HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise validation_error(ErrorCode.INVALID_FORMAT, f"Bad LSEQ magic {magic!r}")
    if version != VERSION:
        raise validation_error(
            ErrorCode.INVALID_FORMAT,
            f"Unsupported LSEQ version {version}",
            details={"supported": VERSION}
        )
    expected = _HEADER.size + 4 * B * L * d
    if len(payload) != expected:
        raise validation_error(
            ErrorCode.INVALID_FORMAT,
            f"LSEQ payload has {len(payload)} bytes, header implies {expected}"
        )
    values = np.frombuffer(payload, dtype="<f4", offset=_HEADER.size)
    return values.reshape(B, L, d).astype(np.float64)


def save_lseq(path: Union[str, Path], batch: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_lseq(batch))
    logger.info(f"Wrote {path} ({np.asarray(batch).shape})")
    return path


def load_lseq(path: Union[str, Path], field: str = "input") -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise resource_error(ErrorCode.INVALID_ARGUMENT, f"Latent file not found: {path}", field=field)
    if path.suffix.lower() == ".csv":
        return load_csv(path)
    return decode_lseq(path.read_bytes())


def to_frame(batch: np.ndarray) -> pd.DataFrame:
    """Long table with one row per (item, frame)."""
    arr = np.asarray(batch, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    B, L, d = arr.shape
    df = pd.DataFrame(arr.reshape(B * L, d), columns=[f"c{j}" for j in range(d)])
    df.insert(0, "frame", np.tile(np.arange(L), B))
    df.insert(0, "item", np.repeat(np.arange(B), L))
    return df


def from_frame(df: pd.DataFrame) -> np.ndarray:
    channels = sorted((c for c in df.columns if c.startswith("c")), key=lambda c: int(c[1:]))
    if "item" not in df.columns or "frame" not in df.columns or not channels:
        raise validation_error(
            ErrorCode.INVALID_FORMAT,
            "Latent CSV needs item, frame and c0..c{d-1} columns",
            details={"columns": list(df.columns)}
        )
    df = df.sort_values(["item", "frame"])
    B = df["item"].nunique()
    L = df["frame"].nunique()
    if len(df) != B * L:
        raise validation_error(ErrorCode.INVALID_FORMAT, "Latent CSV is ragged: items differ in frame count")
    return df[channels].to_numpy(dtype=np.float64).reshape(B, L, len(channels))


def save_csv(path: Union[str, Path], batch: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    to_frame(batch).to_csv(path, index=False)
    return path


def load_csv(path: Union[str, Path]) -> np.ndarray:
    return from_frame(pd.read_csv(path))
