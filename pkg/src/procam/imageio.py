"""PPM (P6, maxval 255) and PNG image I/O.

PPM is handled natively and is the bit-exact reference format; PNG goes
through Pillow.
"""
from __future__ import annotations

import io
import os
from pathlib import Path
from typing import BinaryIO, Iterator

import numpy as np

from .errors import BundleIOError, InputError
from .imaging import as_binary, as_image


def _read_token(stream: BinaryIO) -> bytes | None:
    tok = b""
    while True:
        c = stream.read(1)
        if not c:
            return tok or None
        if c == b"#":
            # comment runs to end of line
            while c not in (b"\n", b"\r", b""):
                c = stream.read(1)
            if tok:
                return tok
            continue
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c


def read_ppm_stream(stream: BinaryIO) -> np.ndarray | None:
    """Read one P6 image from ``stream``; None on clean end of stream."""
    magic = _read_token(stream)
    if magic is None:
        return None
    if magic != b"P6":
        raise InputError(f"not a binary PPM (magic {magic!r})")
    try:
        width, height, maxval = (int(_read_token(stream)) for _ in range(3))
    except (TypeError, ValueError) as e:
        raise InputError("truncated or malformed PPM header") from e
    if maxval != 255:
        raise InputError(f"unsupported PPM maxval {maxval}, only 255 is accepted")
    n = width * height * 3
    data = stream.read(n)
    if len(data) != n:
        raise InputError(f"truncated PPM raster: expected {n} bytes, got {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width, 3).copy()


def iter_ppm_stream(stream: BinaryIO) -> Iterator[np.ndarray]:
    """Yield consecutive P6 frames from a concatenated stream."""
    while True:
        img = read_ppm_stream(stream)
        if img is None:
            return
        yield img


def ppm_bytes(img) -> bytes:
    img = as_image(img)
    h, w = img.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes()


def read_image(path) -> np.ndarray:
    """Load a PPM or PNG file as an RGB uint8 array."""
    path = Path(path)
    try:
        with open(path, "rb") as f:
            head = f.read(2)
            f.seek(0)
            if head == b"P6":
                img = read_ppm_stream(f)
                if img is None:
                    raise InputError(f"{path}: empty file")
                return img
            data = f.read()
    except OSError as e:
        raise BundleIOError(f"cannot read {path}: {e}") from e
    from PIL import Image as PILImage

    try:
        with PILImage.open(io.BytesIO(data)) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except Exception as e:  # Pillow raises a zoo of types
        raise InputError(f"{path}: unreadable image ({e})") from e


def write_image(path, img) -> None:
    """Write ``img`` as PPM or PNG depending on the file suffix.

    Binary images (H, W) are stored with 0/1 scaled to 0/255.
    """
    path = Path(path)
    a = np.asarray(img)
    if a.ndim == 2:
        a = np.repeat((as_binary(a) * 255)[..., None], 3, axis=2)
    a = as_image(a)
    try:
        if path.suffix.lower() == ".png":
            from PIL import Image as PILImage

            PILImage.fromarray(a, "RGB").save(path)
        else:
            tmp = path.with_name(path.name + ".tmp")
            with open(tmp, "wb") as f:
                f.write(ppm_bytes(a))
            os.replace(tmp, path)
    except OSError as e:
        raise BundleIOError(f"cannot write {path}: {e}") from e
