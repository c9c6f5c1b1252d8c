"""Binary netpbm image IO: P6 colour frames and P5 grayscale masks."""

from __future__ import annotations

import numpy as np


class NetpbmError(ValueError):
    """Raised for malformed netpbm files."""


def _header_tokens(data: bytes, count: int, path) -> tuple[list[int], int]:
    # Tokens are whitespace-separated; '#' starts a comment through end of line.
    tokens: list[int] = []
    i = 0
    while len(tokens) < count:
        if i >= len(data):
            raise NetpbmError(f"{path}: truncated header")
        c = data[i:i + 1]
        if c == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j:j + 1].isspace():
                j += 1
            tokens.append(int(data[i:j]))
            i = j
    # Exactly one whitespace byte separates the header from the raster.
    return tokens, i + 1


def write_ppm(path, image: np.ndarray) -> None:
    """Write an (H, W, 3) uint8 array as a binary P6 file with maxval 255."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise NetpbmError(f"write_ppm needs (H, W, 3) uint8, got {img.shape} {img.dtype}")
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P6":
        raise NetpbmError(f"{path}: not a binary PPM")
    (w, h, maxval), off = _header_tokens(data[2:], 3, path)
    off += 2
    if maxval != 255:
        raise NetpbmError(f"{path}: unsupported maxval {maxval}")
    raster = data[off:off + w * h * 3]
    if len(raster) != w * h * 3:
        raise NetpbmError(f"{path}: truncated raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3).copy()


def write_pgm(path, image: np.ndarray) -> None:
    """Write an (H, W) uint8 array as a binary P5 file with maxval 255."""
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise NetpbmError(f"write_pgm needs (H, W) uint8, got {img.shape} {img.dtype}")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P5":
        raise NetpbmError(f"{path}: not a binary PGM")
    (w, h, maxval), off = _header_tokens(data[2:], 3, path)
    off += 2
    if maxval != 255:
        raise NetpbmError(f"{path}: unsupported maxval {maxval}")
    raster = data[off:off + w * h]
    if len(raster) != w * h:
        raise NetpbmError(f"{path}: truncated raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy()


def write_mask(path, mask: np.ndarray) -> None:
    """Write a boolean mask as PGM, foreground mapped to 255."""
    write_pgm(path, np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))


def read_mask(path) -> np.ndarray:
    """Read a PGM mask; pixels above 127 count as foreground."""
    return read_pgm(path) > 127
