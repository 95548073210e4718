"""8-bit RGB image files: binary PPM (P6) always, PNG when Pillow is importable."""

from __future__ import annotations

import os

import numpy as np

try:  # optional PNG support
    from PIL import Image as _PIL
except ImportError:  # pragma: no cover
    _PIL = None

PNG_SUPPORTED = _PIL is not None


class ImageFormatError(ValueError):
    pass


def _read_token(buf: bytes, pos: int) -> tuple:
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError(f"truncated PPM header at byte offset {pos}")
    return buf[start:pos], pos


def decode_ppm(buf: bytes) -> np.ndarray:
    """P6 bytes -> float array (3, H, W) in [0, 1]."""
    magic, pos = _read_token(buf, 0)
    if magic != b"P6":
        raise ImageFormatError(f"not a binary PPM (magic {magic[:8]!r} at byte offset 0)")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise ImageFormatError(f"bad PPM header field {tok!r} before byte offset {pos}")
        fields.append(int(tok))
    w, h, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"unsupported bit depth: maxval {maxval} (only 8-bit, maxval 255)")
    if w < 1 or h < 1:
        raise ImageFormatError(f"bad PPM extents {w}x{h}")
    pos += 1  # single whitespace byte after maxval
    need = 3 * w * h
    have = len(buf) - pos
    if have < need:
        raise ImageFormatError(
            f"truncated PPM: pixel data ends at byte offset {len(buf)}, expected {pos + need}"
        )
    px = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos).reshape(h, w, 3)
    return px.transpose(2, 0, 1).astype(np.float64) / 255.0


def to_uint8(img) -> np.ndarray:
    """(3, H, W) in [0, 1] -> (H, W, 3) uint8, round half up, clamped."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 3 or a.shape[0] != 3:
        raise ImageFormatError(f"expected a 3 x H x W image, got {a.shape}")
    q = np.floor(np.clip(a, 0.0, 1.0) * 255.0 + 0.5)
    return np.clip(q, 0, 255).astype(np.uint8).transpose(1, 2, 0)


def encode_ppm(img) -> bytes:
    px = to_uint8(img)
    h, w, _ = px.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + px.tobytes()


def load_image(path) -> np.ndarray:
    path = os.fspath(path)
    if path.lower().endswith(".png"):
        if not PNG_SUPPORTED:
            raise ImageFormatError("PNG support needs Pillow")
        with _PIL.open(path) as im:
            if im.mode not in ("RGB", "L", "RGBA", "P"):
                raise ImageFormatError(f"unsupported PNG mode {im.mode}")
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        return arr.transpose(2, 0, 1).astype(np.float64) / 255.0
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())


def save_image(path, img) -> None:
    path = os.fspath(path)
    if path.lower().endswith(".png"):
        if not PNG_SUPPORTED:
            raise ImageFormatError("PNG support needs Pillow")
        _PIL.fromarray(to_uint8(img), "RGB").save(path)
        return
    with open(path, "wb") as fh:
        fh.write(encode_ppm(img))
