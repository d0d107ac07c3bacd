"""Binary (P5) PGM reading and writing, plus u8 <-> [0, 1] conversion.

Only maxval-255 binary PGM is supported. The writer emits the canonical
header ``P5\\n<W> <H>\\n255\\n`` so that files it produced round-trip byte
for byte; the reader additionally accepts comments and arbitrary header
whitespace.
"""

from __future__ import annotations

import numpy as np

from .errors import PgmError


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise PgmError("unexpected end of header", offset=pos)
    start = pos
    while pos < n and not data[pos:pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def load_pgm_bytes(data: bytes) -> np.ndarray:
    """Parse P5 PGM bytes into an (H, W) uint8 array."""
    magic, pos = _read_token(data, 0)
    if magic != b"P5":
        raise PgmError(f"unsupported format {magic!r}, only binary P5 is handled", offset=0)
    fields = []
    for name in ("width", "height", "maxval"):
        token, pos = _read_token(data, pos)
        try:
            value = int(token)
        except ValueError:
            raise PgmError(f"bad {name} token {token!r}", offset=pos - len(token)) from None
        if value <= 0:
            raise PgmError(f"{name} must be positive, got {value}", offset=pos - len(token))
        fields.append(value)
    width, height, maxval = fields
    if maxval != 255:
        raise PgmError(f"unsupported maxval {maxval}, only 255 is handled", offset=pos)
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise PgmError("missing whitespace after maxval", offset=pos)
    pos += 1
    expected = width * height
    payload = data[pos:pos + expected]
    if len(payload) < expected:
        raise PgmError(
            f"truncated payload: expected {expected} bytes, found {len(payload)}",
            offset=pos + len(payload))
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def load_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return load_pgm_bytes(fh.read())


def save_pgm_bytes(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 2:
        raise PgmError(f"expected a 2-D uint8 array, got {img.dtype} {img.shape}")
    height, width = img.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    return header + img.tobytes()


def save_pgm(path, img: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(save_pgm_bytes(img))


def image_to_matrix(img: np.ndarray) -> np.ndarray:
    """uint8 pixels to float64 in [0, 1]."""
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise PgmError(f"expected uint8 pixels, got {img.dtype}")
    return img.astype(np.float64) / 255.0


def matrix_to_image(x: np.ndarray) -> np.ndarray:
    """Round-clamp a real matrix to uint8; inverse of image_to_matrix on its range."""
    x = np.asarray(x, dtype=np.float64)
    return np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)
