"""On-disk formats: EMSP spectrogram cache files and PGM attention images.

EMSP layout (little-endian)::

    b"EMSP" | u32 version | u32 rows | u32 cols | u32 dtype code | rows*cols float32
"""

from __future__ import annotations

import hashlib
import re
import struct
from pathlib import Path

import numpy as np

EMSP_MAGIC = b"EMSP"
EMSP_VERSION = 1
_HEADER = struct.Struct("<4sIIII")
_DTYPES = {1: np.dtype("<f4")}


class CacheFormatError(ValueError):
    pass


def write_emsp(path, values: np.ndarray) -> str:
    """Write a 2-D array; returns the SHA-256 of the file contents."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError(f"EMSP stores 2-D arrays, got shape {values.shape}")
    rows, cols = values.shape
    blob = _HEADER.pack(EMSP_MAGIC, EMSP_VERSION, rows, cols, 1) + \
        np.ascontiguousarray(values, dtype="<f4").tobytes()
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def read_emsp_header(path) -> tuple[int, int, int]:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    return _parse_header(path, head)[1:]


def _parse_header(path, head: bytes):
    if len(head) < _HEADER.size:
        raise CacheFormatError(f"{path}: truncated EMSP header")
    magic, version, rows, cols, code = _HEADER.unpack(head)
    if magic != EMSP_MAGIC:
        raise CacheFormatError(f"{path}: bad magic {magic!r}")
    if version != EMSP_VERSION:
        raise CacheFormatError(f"{path}: unsupported EMSP version {version}")
    if code not in _DTYPES:
        raise CacheFormatError(f"{path}: unknown dtype code {code}")
    return version, rows, cols, code


def read_emsp(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    _, rows, cols, code = _parse_header(path, blob[:_HEADER.size])
    dtype = _DTYPES[code]
    body = blob[_HEADER.size:]
    if len(body) != rows * cols * dtype.itemsize:
        raise CacheFormatError(f"{path}: payload size does not match {rows}x{cols}")
    return np.frombuffer(body, dtype=dtype).reshape(rows, cols).astype(np.float64)


def write_pgm(path, image: np.ndarray) -> None:
    """Binary 8-bit graymap; values are scaled by the array maximum."""
    image = np.asarray(image, dtype=np.float64)
    peak = image.max() if image.size and image.max() > 0 else 1.0
    pix = np.clip(np.round(255.0 * image / peak), 0, 255).astype(np.uint8)
    # row 0 at the bottom, as attention plots are usually drawn
    pix = pix[::-1]
    header = f"P5\n{pix.shape[1]} {pix.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pix.tobytes())


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+255\s", blob)
    if m is None:
        raise ValueError(f"{path}: not an 8-bit binary PGM")
    width, height = int(m.group(1)), int(m.group(2))
    pix = np.frombuffer(blob[m.end():m.end() + width * height], dtype=np.uint8)
    return pix.reshape(height, width)[::-1]


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
