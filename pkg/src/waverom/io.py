"""Serialization primitives: WAVEROM-MAT0 matrices, text headers, PGM, CSV.

The binary matrix format is deliberately minimal: a 16-byte ASCII magic
("WAVEROM-MAT0", NUL padded), three little-endian int64 values (rows,
cols, block_size), then the row-major little-endian float64 payload.
Metadata that does not fit that envelope travels in a sidecar text
header of "key = value" lines next to the binary file.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"WAVEROM-MAT0"
_MAGIC_LEN = 16


def write_matrix(path: str | Path, data: np.ndarray, block_size: int = 1) -> None:
    """Write a dense real matrix in the WAVEROM-MAT0 binary format.

    Parameters
    ----------
    path : path-like
        Destination file.
    data : ndarray
        One- or two-dimensional real array; vectors are written as columns.
    block_size : int
        Uniform block size recorded in the header (1 for plain matrices).
    """
    a = np.asarray(data, dtype="<f8")
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise FormatError(f"can only serialize 1-D or 2-D arrays, got ndim={a.ndim}")
    with open(path, "wb") as fh:
        fh.write(MAGIC.ljust(_MAGIC_LEN, b"\x00"))
        np.array([a.shape[0], a.shape[1], block_size], dtype="<i8").tofile(fh)
        fh.write(np.ascontiguousarray(a).tobytes())


def read_matrix(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a WAVEROM-MAT0 file; returns (matrix, block_size)."""
    raw = Path(path).read_bytes()
    if len(raw) < _MAGIC_LEN + 24:
        raise FormatError(f"{path}: file too short for WAVEROM-MAT0 header")
    if raw[:_MAGIC_LEN].rstrip(b"\x00") != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:_MAGIC_LEN]!r}")
    rows, cols, block_size = np.frombuffer(raw, dtype="<i8", count=3, offset=_MAGIC_LEN)
    if rows <= 0 or cols <= 0 or block_size <= 0:
        raise FormatError(f"{path}: nonsensical dims ({rows}, {cols}, {block_size})")
    need = _MAGIC_LEN + 24 + 8 * rows * cols
    if len(raw) < need:
        raise FormatError(f"{path}: expected {need} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=_MAGIC_LEN + 24)
    return data.reshape(rows, cols).copy(), int(block_size)


def write_header(path: str | Path, fields: dict) -> None:
    """Write a sidecar text header of "key = value" lines."""
    lines = [f"{key} = {value}" for key, value in fields.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_header(path: str | Path) -> dict:
    """Read a sidecar text header; values parsed as int, float, or str."""
    fields: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        fields[key.strip()] = _parse_value(value.strip())
    return fields


def _parse_value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def write_pgm(path: str | Path, field: np.ndarray) -> tuple[float, float]:
    """Export a 2-D field as an 8-bit binary PGM image, min-max scaled.

    Returns the (min, max) range used for the scaling so callers can
    record it in a manifest. Rows of the array map to image rows.
    """
    a = np.asarray(field, dtype=float)
    if a.ndim != 2:
        raise FormatError(f"PGM export needs a 2-D array, got ndim={a.ndim}")
    lo, hi = float(a.min()), float(a.max())
    span = hi - lo
    if span == 0.0:
        pixels = np.zeros_like(a, dtype=np.uint8)
    else:
        pixels = np.round(255.0 * (a - lo) / span).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
    return lo, hi


def write_csv(path: str | Path, header: list[str], rows: list) -> None:
    """Write rows (sequences) to CSV with a header line."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
