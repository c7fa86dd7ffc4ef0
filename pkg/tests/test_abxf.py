import struct

import numpy as np
import pytest

from ablab.abxf import ABXFError, ABXFField, decode, encode, read_abxf, write_abxf
from ablab.grid import Grid2D


def test_real_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    v = rng.normal(size=(9, 13))
    v[0, 0] = -0.0
    v[1, 1] = np.nextafter(1.0, 2.0)
    f = ABXFField((-1.25, 3.0), (0.1, 0.2), v)
    write_abxf(tmp_path / "a.abxf", f)
    g = read_abxf(tmp_path / "a.abxf")
    assert g.values.tobytes() == v.tobytes()
    assert g.origin == (-1.25, 3.0) and g.spacing == (0.1, 0.2)
    assert not g.is_complex


def test_complex_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(1)
    v = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    grid = Grid2D((0.0, 0.0), 0.5, 8, 8)
    write_abxf(tmp_path / "c.abxf", grid=grid, values=v)
    g = read_abxf(tmp_path / "c.abxf")
    assert g.is_complex
    assert g.values.tobytes() == v.tobytes()
    assert g.to_grid() == grid


def test_header_layout():
    buf = encode(ABXFField((1.0, 2.0), (0.5, 0.25), np.zeros((3, 2))))
    assert buf[:4] == b"ABXF"
    assert struct.unpack_from("<III", buf, 4) == (1, 2, 3)
    assert struct.unpack_from("<4d", buf, 16) == (1.0, 2.0, 0.5, 0.25)
    assert buf[48] == 0
    assert len(buf) == 49 + 6 * 8


def test_row_major_x_fastest():
    v = np.arange(6.0).reshape(2, 3)
    buf = encode(ABXFField((0, 0), (1, 1), v))
    assert np.frombuffer(buf[49:], "<f8").tolist() == [0, 1, 2, 3, 4, 5]


@pytest.mark.parametrize("mutate", [
    lambda b: b"ABXG" + b[4:],
    lambda b: b[:4] + struct.pack("<I", 2) + b[8:],
    lambda b: b[:-1],
    lambda b: b + b"\x00",
    lambda b: b[:48] + b"\x07" + b[49:],
    lambda b: b[:20],
])
def test_malformed_rejected(mutate):
    buf = encode(ABXFField((0, 0), (1, 1), np.ones((2, 2))))
    with pytest.raises(ABXFError):
        decode(mutate(buf))


def test_unequal_spacing_has_no_grid():
    with pytest.raises(ABXFError):
        ABXFField((0, 0), (1.0, 2.0), np.zeros((8, 8))).to_grid()
