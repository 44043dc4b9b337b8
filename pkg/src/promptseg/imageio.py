"""Image file I/O: PNG (8-bit RGB/gray, non-interlaced) plus raw PPM/PGM.

PNG goes through Pillow. The netpbm writers are spelled out here so the
on-disk bytes are pinned: ASCII magic, one whitespace-separated header
``width height maxval`` with maxval 255, a single newline, then raw
big-endian-free byte data (P6 interleaved RGB, P5 single channel).
Masks are P5 files holding exactly {0, 255}.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ContractError


def _to_u8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, img: np.ndarray):
    """img: float (3, H, W) in [0, 1] -> binary P6."""
    u8 = _to_u8(img)
    c, h, w = u8.shape
    if c != 3:
        raise ContractError("P6 needs 3 channels")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(u8.transpose(1, 2, 0).tobytes())


def write_pgm(path, gray: np.ndarray):
    """gray: float (H, W) in [0, 1] (or {0,1} masks) -> binary P5."""
    u8 = _to_u8(gray)
    h, w = u8.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(u8.tobytes())


def _read_netpbm(path, magic: bytes):
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(magic):
        raise ContractError(f"{path}: expected {magic.decode()} file")
    # header: magic, width, height, maxval as whitespace-separated tokens
    tokens, i = [], 2
    while len(tokens) < 3:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        tokens.append(int(data[i:j]))
        i = j
    i += 1  # single whitespace byte before raster
    w, h, maxval = tokens
    if maxval != 255:
        raise ContractError(f"{path}: maxval must be 255")
    return data[i:], w, h


def read_ppm(path) -> np.ndarray:
    raw, w, h = _read_netpbm(path, b"P6")
    arr = np.frombuffer(raw[: 3 * w * h], dtype=np.uint8).reshape(h, w, 3)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def read_pgm(path) -> np.ndarray:
    raw, w, h = _read_netpbm(path, b"P5")
    return np.frombuffer(raw[: w * h], dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


def write_png(path, img: np.ndarray):
    """img: float (3, H, W) or (1, H, W)/(H, W) in [0, 1]."""
    u8 = _to_u8(img)
    if u8.ndim == 3 and u8.shape[0] == 3:
        Image.fromarray(u8.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")
    else:
        g = u8[0] if u8.ndim == 3 else u8
        Image.fromarray(g, mode="L").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("RGB", "L"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.uint8)
    if arr.ndim == 2:
        return arr[None].astype(np.float64) / 255.0
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def write_image(path, img: np.ndarray):
    path = Path(path)
    if path.suffix == ".png":
        write_png(path, img)
    elif path.suffix == ".ppm":
        write_ppm(path, img)
    elif path.suffix == ".pgm":
        write_pgm(path, img if img.ndim == 2 else img[0])
    else:
        raise ContractError(f"unsupported image format {path.suffix!r}")


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".png":
        return read_png(path)
    if path.suffix == ".ppm":
        return read_ppm(path)
    if path.suffix == ".pgm":
        return read_pgm(path)[None]
    raise ContractError(f"unsupported image format {path.suffix!r}")


def write_mask(path, mask: np.ndarray):
    """Binary mask (H, W) of {0, 1} -> P5 with {0, 255}."""
    m = np.asarray(mask)
    if not np.all((m == 0) | (m == 1)):
        raise ContractError("mask must be binary")
    write_pgm(path, m.astype(np.float64))


def read_mask(path) -> np.ndarray:
    m = read_pgm(path)
    return (m >= 0.5).astype(np.float64)
