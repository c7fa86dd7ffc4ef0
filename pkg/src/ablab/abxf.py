"""ABXF: a small binary container for node fields on uniform 2D grids.

Layout (little-endian)::

    magic     4 bytes   b"ABXF"
    version   u32       1
    nx, ny    u32, u32
    origin    f64 x 2
    spacing   f64 x 2
    flag      u8        0 = real f64, 1 = complex (re, im) f64 pairs
    payload   ny rows of nx values, x fastest

Values are written verbatim, so a round trip reproduces every bit.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .grid import Grid2D

MAGIC = b"ABXF"
VERSION = 1
_HEADER = struct.Struct("<4sIII2d2dB")


class ABXFError(ValueError):
    """Malformed or unsupported ABXF data."""


@dataclass
class ABXFField:
    origin: tuple
    spacing: tuple
    values: np.ndarray

    @property
    def nx(self):
        return self.values.shape[1]

    @property
    def ny(self):
        return self.values.shape[0]

    @property
    def is_complex(self):
        return np.iscomplexobj(self.values)

    @classmethod
    def from_grid(cls, grid: Grid2D, values):
        return cls(grid.origin, (grid.h, grid.h), np.asarray(values))

    def to_grid(self) -> Grid2D:
        hx, hy = self.spacing
        if hx != hy:
            raise ABXFError("Grid2D needs equal spacing in both directions")
        return Grid2D(tuple(self.origin), hx, self.nx, self.ny)


def encode(field: ABXFField) -> bytes:
    v = np.asarray(field.values)
    if v.ndim != 2:
        raise ABXFError("values must be a 2D array (ny, nx)")
    cplx = np.iscomplexobj(v)
    data = np.ascontiguousarray(v, dtype="<c16" if cplx else "<f8")
    head = _HEADER.pack(MAGIC, VERSION, v.shape[1], v.shape[0],
                        float(field.origin[0]), float(field.origin[1]),
                        float(field.spacing[0]), float(field.spacing[1]), 1 if cplx else 0)
    return head + data.tobytes()


def decode(buf: bytes) -> ABXFField:
    if len(buf) < _HEADER.size:
        raise ABXFError("truncated header")
    magic, version, nx, ny, ox, oy, hx, hy, flag = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ABXFError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ABXFError(f"unsupported version {version}")
    if flag not in (0, 1):
        raise ABXFError(f"unknown payload flag {flag}")
    dtype = np.dtype("<c16" if flag else "<f8")
    expected = nx * ny * dtype.itemsize
    payload = buf[_HEADER.size:]
    if len(payload) != expected:
        raise ABXFError(f"payload has {len(payload)} bytes, header implies {expected}")
    values = np.frombuffer(payload, dtype=dtype).reshape(ny, nx).copy()
    return ABXFField((ox, oy), (hx, hy), values)


def write_abxf(path, field: ABXFField | None = None, *, grid: Grid2D | None = None, values=None):
    """Write a field; pass either an ``ABXFField`` or ``grid`` and ``values``."""
    if field is None:
        if grid is None or values is None:
            raise ValueError("need a field or both grid and values")
        field = ABXFField.from_grid(grid, values)
    with open(path, "wb") as fh:
        fh.write(encode(field))


def read_abxf(path) -> ABXFField:
    with open(path, "rb") as fh:
        return decode(fh.read())
