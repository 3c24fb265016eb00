import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from ptychodv import io


def test_header_layout():
    b = io.tensor_bytes(np.zeros((2, 3)))
    assert b[:4] == b"PTYT"
    assert int.from_bytes(b[4:6], "little") == 1
    assert b[6] == 0 and b[7] == 2
    assert int.from_bytes(b[8:16], "little") == 2 and int.from_bytes(b[16:24], "little") == 3
    assert len(b) == 24 + 6 * 8


def test_complex_is_interleaved():
    b = io.tensor_bytes(np.array([1 + 2j, 3 - 4j]))
    assert b[6] == 1
    assert np.array_equal(np.frombuffer(b[16:], "<f8"), [1, 2, 3, -4])


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=0, max_dims=4, max_side=5),
                  elements=st.floats(allow_nan=True, allow_infinity=True)))
def test_real_round_trip_bit_exact(a):
    back = io.tensor_from_bytes(io.tensor_bytes(a))
    assert back.shape == a.shape
    assert back.tobytes() == np.ascontiguousarray(a).tobytes()


def test_complex_round_trip_file(tmp_path, rng):
    a = rng.standard_normal((3, 4, 5)) + 1j * rng.standard_normal((3, 4, 5))
    io.write_tensor(tmp_path / "a.ptyt", a)
    b = io.read_tensor(tmp_path / "a.ptyt")
    assert b.dtype == np.complex128 and np.array_equal(a, b)
    io.write_tensor(tmp_path / "b.ptyt", b)
    assert (tmp_path / "a.ptyt").read_bytes() == (tmp_path / "b.ptyt").read_bytes()


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + (9).to_bytes(2, "little") + b[6:],
    lambda b: b[:6] + bytes([7]) + b[7:],
    lambda b: b[:-1],
    lambda b: b[:3],
])
def test_malformed_rejected(mutate):
    with pytest.raises(io.FormatError):
        io.tensor_from_bytes(mutate(io.tensor_bytes(np.ones((2, 2)))))


def test_canonical_json_and_hash():
    a, b = {"b": 1, "a": [1, 2]}, {"a": [1, 2], "b": 1}
    assert io.canonical_json(a) == io.canonical_json(b)
    assert io.config_hash(a) == io.config_hash(b)
    assert io.config_hash(a) != io.config_hash({"a": [2, 1], "b": 1})
    assert len(io.config_hash(a)) == 16


def test_constant_image_export(tmp_path):
    side = io.image_export(np.full((4, 4), 0.7 + 0j), tmp_path / "c")
    q = io.read_pgm(tmp_path / "c_mag.pgm")
    assert np.all(q == q[0, 0])
    assert side["magnitude"] == {"min": 0.7, "max": 0.7}
    assert json.loads((tmp_path / "c_scale.json").read_text()) == side
    mag, _ = io.image_import(tmp_path / "c")
    assert np.allclose(mag, 0.7)


def test_export_round_trip_quantization(tmp_path, rng):
    g = (0.5 + rng.random((8, 8))) * np.exp(1j * rng.uniform(-3, 3, (8, 8)))
    io.image_export(g, tmp_path / "g")
    mag, ph = io.image_import(tmp_path / "g")
    span = np.ptp(np.abs(g))
    assert np.max(np.abs(mag - np.abs(g))) <= span / 65535
    assert np.max(np.abs(ph - np.angle(g))) <= 2 * np.pi / 65535


def test_real_positive_phase_is_mid_gray(tmp_path, rng):
    io.image_export(rng.random((4, 4)) + 0.1, tmp_path / "r")
    q = io.read_pgm(tmp_path / "r_phase.pgm")
    assert np.all(np.abs(q - 32767.5) <= 0.5)


def test_pgm_header(tmp_path):
    io.write_pgm(tmp_path / "p.pgm", np.array([[0, 65535], [1, 2]]))
    raw = (tmp_path / "p.pgm").read_bytes()
    assert raw.startswith(b"P5\n2 2\n65535\n")
    assert np.array_equal(io.read_pgm(tmp_path / "p.pgm"), [[0, 65535], [1, 2]])
    (tmp_path / "bad.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(io.FormatError):
        io.read_pgm(tmp_path / "bad.pgm")


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        io.image_export(np.ones((2, 2)), tmp_path / "missing" / "x")
