"""PFM and PNG image files."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image


class ImageFormatError(ValueError):
    pass


def write_pfm(path, image) -> None:
    """Write a float image (H, W) or (H, W, 3) as little-endian PFM.

    PFM stores rows bottom to top; ``image`` row 0 is the top row.
    """
    a = np.asarray(image, dtype=np.float32)
    if a.ndim == 2:
        tag = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError(f"cannot store an image of shape {a.shape} as PFM")
    h, w = a.shape[:2]
    with open(path, "wb") as fh:
        fh.write(tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        fh.write(np.ascontiguousarray(a[::-1]).astype("<f4").tobytes())


_PFM_HEAD = re.compile(rb"^(PF|Pf)\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s")


def read_pfm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = _PFM_HEAD.match(raw[:128])
    if m is None:
        raise ImageFormatError(f"{path}: not a PFM file")
    chans = 3 if m.group(1) == b"PF" else 1
    w, h = int(m.group(2)), int(m.group(3))
    try:
        scale = float(m.group(4))
    except ValueError as exc:
        raise ImageFormatError(f"{path}: bad scale field") from exc
    if scale == 0.0:
        raise ImageFormatError(f"{path}: zero scale field")
    dtype = "<f4" if scale < 0 else ">f4"
    need = w * h * chans * 4
    data = raw[m.end():]
    if len(data) != need:
        raise ImageFormatError(f"{path}: expected {need} bytes of pixel data, found {len(data)}")
    a = np.frombuffer(data, dtype=dtype).astype(np.float32)
    a = a.reshape((h, w, 3) if chans == 3 else (h, w))
    return a[::-1].copy()


def write_png(path, image_u8) -> None:
    Image.fromarray(np.asarray(image_u8, dtype=np.uint8)).save(path)


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im)
