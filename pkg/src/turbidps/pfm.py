"""Portable float map reader/writer.

Grayscale ("Pf") and 3-channel ("PF") variants; the sign of the scale
line encodes endianness (negative = little-endian).  Rows are stored
bottom-to-top per the format, flipped to top-left origin in memory.
"""

from __future__ import annotations

import numpy as np


class PfmError(IOError):
    pass


def _read_token(fh) -> bytes:
    token = b""
    while True:
        ch = fh.read(1)
        if not ch:
            raise PfmError("unexpected end of file in header")
        if ch in b" \t\r\n":
            if token:
                return token
            continue
        token += ch


def read_pfm(path) -> np.ndarray:
    """Read a PFM file to float32, (H, W) or (H, W, 3), top-left origin."""
    with open(path, "rb") as fh:
        tag = _read_token(fh)
        if tag == b"PF":
            channels = 3
        elif tag == b"Pf":
            channels = 1
        else:
            raise PfmError(f"{path}: not a PFM file (tag {tag!r})")
        try:
            width = int(_read_token(fh))
            height = int(_read_token(fh))
            scale = float(_read_token(fh))
        except ValueError as exc:
            raise PfmError(f"{path}: malformed header: {exc}") from exc
        if width <= 0 or height <= 0 or scale == 0:
            raise PfmError(f"{path}: malformed header values")
        count = width * height * channels
        data = np.frombuffer(fh.read(count * 4),
                             dtype="<f4" if scale < 0 else ">f4")
        if data.size != count:
            raise PfmError(f"{path}: expected {count} samples, "
                           f"found {data.size}")
    img = data.reshape(height, width, channels)
    img = np.flipud(img)
    return np.ascontiguousarray(img[..., 0] if channels == 1 else img,
                                dtype=np.float32)


def write_pfm(path, image: np.ndarray) -> None:
    """Write float data as little-endian PFM (scale -1)."""
    image = np.asarray(image)
    if image.ndim == 2:
        tag = b"Pf"
    elif image.ndim == 3 and image.shape[2] == 3:
        tag = b"PF"
    else:
        raise PfmError("image must be (H, W) or (H, W, 3)")
    data = np.flipud(image).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(tag + b"\n")
        fh.write(f"{image.shape[1]} {image.shape[0]}\n".encode())
        fh.write(b"-1.0\n")
        fh.write(data.tobytes())
