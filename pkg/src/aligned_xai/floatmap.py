"""Raw float-map container plus 8-bit PGM/PPM visual exports.

Container layout (all integers little-endian unsigned 32-bit):

    bytes 0..3    magic b"AXF1"
    bytes 4..15   height, width, channels
    bytes 16..    height * width * channels little-endian float32,
                  row-major, channel innermost

Round trips are bit-exact. 2-D arrays are stored with channels=1 and read
back as 2-D; arrays with channels>1 read back as H x W x C.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"AXF1"
_HEADER = struct.Struct("<4sIII")


def write_float_map(data: np.ndarray, path: str | Path) -> None:
    """Write a 2-D (H, W) or 3-D (H, W, C) float map."""
    arr = np.asarray(data)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise FormatError(f"float map must be 2-D or 3-D, got shape {arr.shape}")
    h, w, c = arr.shape
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, h, w, c))
        fh.write(payload)


def read_float_map(path: str | Path) -> np.ndarray:
    """Read a float map; returns (H, W) when channels == 1, else (H, W, C)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(
            f"{path}: truncated header, got {len(raw)} bytes, need {_HEADER.size} (offset 0)"
        )
    magic, h, w, c = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0, expected {MAGIC!r}")
    expected = h * w * c * 4
    got = len(raw) - _HEADER.size
    if got != expected:
        raise FormatError(
            f"{path}: expected {expected} payload bytes at offset {_HEADER.size}, got {got}"
        )
    arr = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(h, w, c)
    arr = arr.astype(np.float32, copy=True)
    return arr[:, :, 0] if c == 1 else arr


def write_pgm(gray: np.ndarray, path: str | Path) -> None:
    """Write an 8-bit binary PGM (P5). Floats in [0, 1] are scaled to 0..255."""
    arr = np.asarray(gray)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim != 2:
        raise FormatError(f"PGM needs a 2-D image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def write_ppm(rgb: np.ndarray, path: str | Path) -> None:
    """Write an 8-bit binary PPM (P6) from an (H, W, 3) image."""
    arr = np.asarray(rgb)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise FormatError(f"PPM needs an (H, W, 3) image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w, _ = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_netpbm(path: str | Path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) as floats in [0, 1].

    Returns (H, W) for PGM and (H, W, 3) for PPM. Handles '#' comments and
    arbitrary whitespace in the header, per the netpbm grammar.
    """
    with open(path, "rb") as fh:
        blob = fh.read()

    def next_token(pos: int) -> tuple[bytes, int]:
        while pos < len(blob):
            ch = blob[pos : pos + 1]
            if ch == b"#":
                while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated netpbm header")
        return blob[start:pos], pos

    magic, pos = next_token(0)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: expected P5 or P6 magic, got {magic!r}")
    dims = []
    for _ in range(3):
        tok, pos = next_token(pos)
        if not tok.isdigit():
            raise FormatError(f"{path}: non-numeric header token {tok!r}")
        dims.append(int(tok))
    w, h, maxval = dims
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    channels = 1 if magic == b"P5" else 3
    expected = h * w * channels
    payload = blob[pos : pos + expected]
    if len(payload) != expected:
        raise FormatError(f"{path}: expected {expected} pixel bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8).astype(np.float32) / 255.0
    if channels == 1:
        return arr.reshape(h, w)
    return arr.reshape(h, w, 3)
