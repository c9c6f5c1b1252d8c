"""Named-tensor container files.

Layout: the ASCII magic line ``TAVS1`` followed by one record per tensor.
A record is four ASCII header lines

    name <identifier>
    dtype f64
    ndim <k>
    dims <d1> ... <dk>

a blank line, then the row-major little-endian float64 payload. Records
are concatenated in write order, which follows the mapping's insertion
order, so writes are byte-deterministic.
"""

from __future__ import annotations

import io
from typing import Mapping

import numpy as np

MAGIC = b"TAVS1\n"


class ContainerError(ValueError):
    """Raised for malformed or truncated container files."""


def write_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    for name, arr in tensors.items():
        if not name or any(c.isspace() for c in name):
            raise ContainerError(f"invalid tensor name {name!r}")
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim and not a.flags["C_CONTIGUOUS"]:
            a = np.ascontiguousarray(a)
        dims = " ".join(str(d) for d in a.shape)
        header = f"name {name}\ndtype f64\nndim {a.ndim}\ndims {dims}\n\n"
        buf.write(header.encode("ascii"))
        buf.write(a.astype("<f8", copy=False).tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_line(fh, path) -> str:
    line = fh.readline()
    if not line.endswith(b"\n"):
        raise ContainerError(f"{path}: truncated header")
    return line[:-1].decode("ascii")


def read_tensors(path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ContainerError(f"{path}: bad magic, not a tensor container")
        while True:
            first = fh.readline()
            if first == b"":
                break
            if not first.endswith(b"\n"):
                raise ContainerError(f"{path}: truncated header")
            fields = first[:-1].decode("ascii").split(" ", 1)
            if fields[0] != "name" or len(fields) != 2:
                raise ContainerError(f"{path}: expected name line, got {first!r}")
            name = fields[1]
            dtype_line = _read_line(fh, path)
            if dtype_line != "dtype f64":
                raise ContainerError(f"{path}: unsupported dtype line {dtype_line!r}")
            ndim_line = _read_line(fh, path)
            if not ndim_line.startswith("ndim "):
                raise ContainerError(f"{path}: expected ndim line, got {ndim_line!r}")
            ndim = int(ndim_line[5:])
            dims_line = _read_line(fh, path)
            if not dims_line.startswith("dims"):
                raise ContainerError(f"{path}: expected dims line, got {dims_line!r}")
            dims = tuple(int(d) for d in dims_line[4:].split())
            if len(dims) != ndim:
                raise ContainerError(f"{path}: ndim {ndim} does not match dims {dims}")
            if _read_line(fh, path) != "":
                raise ContainerError(f"{path}: missing blank line after header")
            count = int(np.prod(dims)) if dims else 1
            payload = fh.read(count * 8)
            if len(payload) != count * 8:
                raise ContainerError(f"{path}: truncated payload for tensor {name!r}")
            if name in out:
                raise ContainerError(f"{path}: duplicate tensor name {name!r}")
            out[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    return out
