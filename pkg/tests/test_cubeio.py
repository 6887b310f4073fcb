import logging
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hsgp import cubeio
from hsgp.core import FormatError, HyperCube, SpectralTransform


def _cube(data, wl=None):
    data = np.asarray(data, dtype=np.float64)
    if wl is None:
        wl = 400.0 + 10.0 * np.arange(data.shape[2])
    return HyperCube(data, wl)


def test_integer_cube_round_trip(tmp_path):
    cube = _cube(np.arange(12.0).reshape(2, 2, 3))
    path = tmp_path / "c.hsc"
    cubeio.write_cube(cube, path)
    back = cubeio.read_cube(path)
    assert back == cube
    np.testing.assert_array_equal(back.wavelengths, cube.wavelengths)


def test_header_and_payload_layout():
    cube = _cube(np.arange(12.0).reshape(2, 2, 3), [400.5, 410.0, 420.25])
    raw = cubeio.encode_cube(cube)
    header, _, payload = raw.partition(b"\n")
    assert header.startswith(b"HSC1 ")
    assert b"rows=2" in header and b"cols=2" in header and b"bands=3" in header
    assert len(payload) == 12 * 4
    # pixel-major little-endian binary32, read without the library
    values = struct.unpack("<12f", payload)
    assert values == tuple(float(v) for v in range(12))


def test_bad_magic():
    raw = cubeio.encode_cube(_cube(np.ones((1, 1, 2))))
    with pytest.raises(FormatError) as info:
        cubeio.decode_cube(b"XXXX" + raw[4:])
    assert info.value.offset == 0


def test_truncated_payload():
    raw = cubeio.encode_cube(_cube(np.ones((2, 2, 1))))  # 4 pixels
    with pytest.raises(FormatError, match="truncat") as info:
        cubeio.decode_cube(raw[:-4])  # only 3 pixels of data
    assert info.value.offset is not None


def test_trailing_bytes_rejected():
    raw = cubeio.encode_cube(_cube(np.ones((1, 1, 2))))
    with pytest.raises(FormatError):
        cubeio.decode_cube(raw + b"\x00")


def test_malformed_header():
    with pytest.raises(FormatError):
        cubeio.decode_cube(b"HSC1 rows=two cols=1 bands=1 wavelengths=1\n\x00\x00\x00\x00")
    with pytest.raises(FormatError):
        cubeio.decode_cube(b"HSC1 rows=1 cols=1 bands=2 wavelengths=1\n" + bytes(8))


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        cubeio.read_cube(tmp_path / "absent.hsc")


f32 = st.floats(-1e6, 1e6, allow_nan=False, width=32)


@settings(max_examples=60, deadline=None)
@given(data=arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 5)),
                   elements=f32))
def test_binary32_round_trip_is_identity(data):
    cube = _cube(data.astype(np.float64))
    assert cubeio.decode_cube(cubeio.encode_cube(cube)) == cube


def test_identity_response(tmp_path):
    path = tmp_path / "id.csv"
    path.write_text("wavelength_nm,r,g,b\n450,0,0,1\n550,0,1,0\n650,1,0,0\n")
    t, wl = cubeio.read_response(path)
    np.testing.assert_array_equal(wl, [450, 550, 650])
    # rows are r, g, b; columns ordered by wavelength
    np.testing.assert_array_equal(t.matrix, [[0, 0, 1], [0, 1, 0], [1, 0, 0]])

    diag = tmp_path / "diag.csv"
    diag.write_text("400,1,0,0\n500,0,1,0\n600,0,0,1\n")
    t2, _ = cubeio.read_response(diag)
    np.testing.assert_array_equal(t2.matrix, np.eye(3))


def test_response_shape_and_normalization(tmp_path):
    rng = np.random.default_rng(0)
    path = tmp_path / "r.csv"
    t = SpectralTransform(rng.random((3, 31)))
    wl = 400.0 + 10 * np.arange(31)
    cubeio.write_response(t, wl, path)
    back, wl_back = cubeio.read_response(path)
    assert back.matrix.shape == (3, 31)
    np.testing.assert_array_equal(back.matrix, t.matrix)
    np.testing.assert_array_equal(wl_back, wl)
    norm, _ = cubeio.read_response(path, normalize=True)
    np.testing.assert_allclose(norm.matrix.sum(axis=1), 1.0, atol=1e-12)


def test_response_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("400,1,0,0\n400,0,1,0\n")
    with pytest.raises(FormatError):
        cubeio.read_response(bad)
    bad.write_text("400,1,0,0\n")
    with pytest.raises(FormatError):
        cubeio.read_response(bad)
    bad.write_text("400,1,0\n500,1,0\n")
    with pytest.raises(FormatError):
        cubeio.read_response(bad)


def test_response_applied_to_cube_matches_pixel_loop(tmp_path):
    rng = np.random.default_rng(2)
    wl = 400.0 + 10 * np.arange(5)
    path = tmp_path / "r.csv"
    cubeio.write_response(SpectralTransform(rng.random((3, 5))), wl, path)
    t, _ = cubeio.read_response(path)
    cube = _cube(rng.random((2, 3, 5)), wl)
    out = t.apply_cube(cube)
    for r in range(2):
        for c in range(3):
            for ch in range(3):
                want = sum(t.matrix[ch, j] * cube.data[r, c, j] for j in range(5))
                assert out.data[r, c, ch] == pytest.approx(want, rel=1e-13)


def test_model_container_round_trip():
    rng = np.random.default_rng(4)
    blobs = {"b": rng.standard_normal((3, 4)), "a": rng.standard_normal(7)}
    raw = cubeio.encode_model({"k": 1}, blobs)
    assert raw.startswith(b"HSM1\n")
    meta, back = cubeio.decode_model(raw)
    assert meta["k"] == 1
    for name in blobs:
        assert np.array_equal(back[name], blobs[name])


def test_model_container_errors():
    raw = cubeio.encode_model({}, {"x": np.ones((2, 2))})
    with pytest.raises(FormatError):
        cubeio.decode_model(b"NOPE" + raw[4:])
    with pytest.raises(FormatError):
        cubeio.decode_model(raw[:-3])
    head, _, rest = raw.partition(b"\n")
    with pytest.raises(FormatError):
        cubeio.decode_model(head + b"\n{not json\n" + rest)


def _read_pnm(path):
    raw = path.read_bytes()
    parts = raw.split(b"\n", 3)
    return parts[0], parts[1], parts[2], parts[3]


def test_pnm_header_and_size(tmp_path):
    cube = _cube(np.arange(4.0).reshape(2, 2, 1))
    path = tmp_path / "b.pgm"
    cubeio.export_band_pnm(cube, 0, path)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n2 2\n255\n")
    assert len(raw) == len(b"P5\n2 2\n255\n") + 4


def test_pnm_min_max_scaling(tmp_path):
    cube = _cube(np.array([[[0.0], [1.0]], [[1.0], [0.0]]]))
    path = tmp_path / "b.pgm"
    cubeio.export_band_pnm(cube, 0, path)
    *_, pixels = _read_pnm(path)
    assert list(pixels) == [0, 255, 255, 0]


def test_pnm_explicit_range_rounds_half_up(tmp_path):
    cube = _cube(np.array([[[1.0], [3.0]]]))
    path = tmp_path / "b.pgm"
    cubeio.export_band_pnm(cube, 0, path, value_range=(0.0, 2.0))
    *_, pixels = _read_pnm(path)
    assert list(pixels) == [128, 255]  # 127.5 rounds to 128; above range clips


def test_pnm_constant_band_warns(tmp_path, caplog):
    cube = _cube(np.full((2, 2, 1), 3.0))
    path = tmp_path / "b.pgm"
    with caplog.at_level(logging.WARNING):
        cubeio.export_band_pnm(cube, 0, path)
    *_, pixels = _read_pnm(path)
    assert list(pixels) == [0, 0, 0, 0]
    assert any("constant" in r.message for r in caplog.records)


def test_pnm_rgb(tmp_path):
    cube = _cube(np.arange(12.0).reshape(2, 2, 3))
    path = tmp_path / "c.ppm"
    cubeio.export_rgb_pnm(cube, path)
    raw = path.read_bytes()
    assert raw.startswith(b"P6\n2 2\n255\n")
    assert len(raw) == len(b"P6\n2 2\n255\n") + 12
    with pytest.raises(ValueError):
        cubeio.export_rgb_pnm(_cube(np.ones((1, 1, 2))), path)
    with pytest.raises(IndexError):
        cubeio.export_band_pnm(cube, 3, path)
