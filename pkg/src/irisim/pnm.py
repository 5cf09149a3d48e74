"""Binary PGM (P5) reading and writing, 8- and 16-bit.

16-bit samples are big-endian as the netpbm format requires.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ParseError

_WHITESPACE = b" \t\n\r\v\f"


def atomic_write_bytes(path, data):
    """Write ``data`` to ``path`` via a temp file in the same directory + rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_pgm(pixels, maxval=65535):
    pixels = np.asarray(pixels)
    if pixels.ndim != 2 or pixels.size == 0:
        raise ValueError("PGM data must be a non-empty 2-D array")
    if not 0 < maxval <= 65535:
        raise ValueError("maxval must lie in [1, 65535]")
    if np.issubdtype(pixels.dtype, np.floating):
        raise TypeError("PGM data must be integer; quantize first")
    if pixels.min() < 0 or pixels.max() > maxval:
        raise ValueError(f"PGM samples must lie in [0, {maxval}]")
    h, w = pixels.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    dtype = ">u2" if maxval > 255 else "u1"
    return header + np.ascontiguousarray(pixels, dtype=dtype).tobytes()


def write_pgm(path, pixels, maxval=65535):
    atomic_write_bytes(path, encode_pgm(pixels, maxval))


def _token(data, pos):
    """Return (token, next_pos) skipping whitespace and ``#`` comments."""
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c in _WHITESPACE and c:
            pos += 1
        elif c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and data[pos : pos + 1] not in _WHITESPACE:
        pos += 1
    if start == pos:
        raise ParseError(f"byte {start}: unexpected end of PGM header")
    return data[start:pos], pos


def decode_pgm(data):
    """Decode P5 bytes into ``(pixels, maxval)``; pixels are uint16 or uint8."""
    magic, pos = _token(data, 0)
    if magic != b"P5":
        raise ParseError(f"byte 0: expected magic 'P5', got {magic[:8]!r}")
    fields = []
    for name in ("width", "height", "maxval"):
        tok, pos = _token(data, pos)
        start = pos - len(tok)
        if not tok.isdigit():
            raise ParseError(f"byte {start}: {name} is not a positive integer: {tok[:16]!r}")
        fields.append(int(tok))
    w, h, maxval = fields
    if w <= 0 or h <= 0:
        raise ParseError(f"byte {pos}: image dimensions must be positive, got {w}x{h}")
    if not 0 < maxval <= 65535:
        raise ParseError(f"byte {pos}: maxval must lie in [1, 65535], got {maxval}")
    if pos >= len(data) or data[pos : pos + 1] not in _WHITESPACE:
        raise ParseError(f"byte {pos}: expected a single whitespace byte after maxval")
    pos += 1
    nbytes = 2 if maxval > 255 else 1
    need = w * h * nbytes
    have = len(data) - pos
    if have < need:
        raise ParseError(f"byte {len(data)}: truncated raster, expected {need} bytes after offset {pos}, got {have}")
    if have > need:
        raise ParseError(f"byte {pos + need}: {have - need} trailing bytes after raster")
    dtype = ">u2" if nbytes == 2 else "u1"
    raw = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    pixels = raw.astype(np.uint16 if nbytes == 2 else np.uint8)
    if pixels.max() > maxval:
        raise ParseError(f"byte {pos}: sample exceeds maxval {maxval}")
    return pixels, maxval


def read_pgm(path):
    return decode_pgm(Path(path).read_bytes())
