"""Binary NetPBM (P5 greyscale / P6 RGB) reading and writing."""

from __future__ import annotations

import os
import re

import numpy as np

from .exceptions import DataIOError

_HEADER = re.compile(rb"^(P[56])\s+(?:#.*?\n\s*)*(\d+)\s+(?:#.*?\n\s*)*(\d+)\s+(?:#.*?\n\s*)*(\d+)\s")


def read_pnm(path: str | os.PathLike) -> np.ndarray:
    """Return ``[H, W]`` uint8 for P5 or ``[3, H, W]`` uint8 for P6."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataIOError(f"cannot read image {os.fspath(path)!r}: {exc.strerror}") from exc
    m = _HEADER.match(raw)
    if m is None:
        raise DataIOError(f"{os.fspath(path)!r} is not a binary P5/P6 NetPBM file")
    magic, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval != 255:
        raise DataIOError(f"{os.fspath(path)!r}: only maxval 255 is supported, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    payload = raw[m.end() : m.end() + w * h * channels]
    if len(payload) != w * h * channels:
        raise DataIOError(f"{os.fspath(path)!r}: truncated pixel data")
    arr = np.frombuffer(payload, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(h, w).copy()
    return arr.reshape(h, w, 3).transpose(2, 0, 1).copy()


def write_pnm(path: str | os.PathLike, image: np.ndarray) -> None:
    """Write ``[H, W]`` as P5 or ``[3, H, W]`` as P6; values are clipped to 0..255."""
    image = np.asarray(image)
    if image.ndim == 2:
        magic, h, w = b"P5", *image.shape
        body = image
    elif image.ndim == 3 and image.shape[0] == 3:
        magic, h, w = b"P6", image.shape[1], image.shape[2]
        body = image.transpose(1, 2, 0)
    else:
        raise DataIOError(f"cannot store array of shape {image.shape} as NetPBM ({os.fspath(path)!r})")
    data = np.clip(np.rint(body), 0, 255).astype(np.uint8).tobytes()
    try:
        os.makedirs(os.path.dirname(os.fspath(path)) or ".", exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(magic + b"\n%d %d\n255\n" % (w, h) + data)
    except OSError as exc:
        raise DataIOError(f"cannot write {os.fspath(path)!r}: {exc.strerror}") from exc


def write_mask(path: str | os.PathLike, mask: np.ndarray) -> None:
    """Store a {0,1} mask as P5 with values {0,255}."""
    write_pnm(path, (np.asarray(mask) > 0).astype(np.uint8) * 255)


def read_mask(path: str | os.PathLike) -> np.ndarray:
    img = read_pnm(path)
    if img.ndim != 2:
        raise DataIOError(f"mask {os.fspath(path)!r} must be a single-channel P5 image")
    return (img >= 128).astype(np.uint8)
