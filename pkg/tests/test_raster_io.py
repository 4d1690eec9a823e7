import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from penumbra.raster_io import (
    RasterFormatError,
    export_raster,
    import_raster,
    read_float_raster,
    read_pgm,
    write_float_raster,
)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 20), st.integers(1, 20)), elements=st.floats(-1e6, 1e6, width=32)))
def test_float_raster_roundtrip_bit_exact(tmp_path_factory, px):
    path = tmp_path_factory.mktemp("r") / "x.nimg"
    export_raster(px, path)
    back = np.asarray(import_raster(path))
    assert back.tobytes() == px.astype("<f4").tobytes()
    assert path.stat().st_size == 14 + 4 * px.size


def test_header_layout(tmp_path):
    path = write_float_raster(np.zeros((3, 5), np.float32), tmp_path / "a.nimg")
    magic, ver, w, h = struct.unpack_from("<4sHII", path.read_bytes())
    assert (magic, ver, w, h) == (b"NIMG", 1, 5, 3)


def test_truncated_reports_sizes(tmp_path):
    path = write_float_raster(np.ones((4, 4), np.float32), tmp_path / "t.nimg")
    path.write_bytes(path.read_bytes()[:-6])
    with pytest.raises(RasterFormatError) as err:
        read_float_raster(path)
    assert "expected 78" in str(err.value) and "got 72" in str(err.value)


def test_header_truncated_and_bad_magic(tmp_path):
    p = tmp_path / "h.nimg"
    p.write_bytes(b"NIM")
    with pytest.raises(RasterFormatError, match="byte 3"):
        read_float_raster(p)
    p.write_bytes(b"XIMG" + bytes(10))
    with pytest.raises(RasterFormatError, match="magic"):
        read_float_raster(p)


def test_png16_scale(tmp_path):
    arr = np.array([[0, 65535], [32768, 1]], dtype=np.uint16)
    Image.fromarray(arr).save(tmp_path / "a.png")
    px = np.asarray(import_raster(tmp_path / "a.png"))
    assert px[0, 1] == 1.0 and px[0, 0] == 0.0
    assert px[1, 0] == pytest.approx(32768 / 65535, abs=1e-7)


def test_png8_scale(tmp_path):
    Image.fromarray(np.array([[0, 255, 51]], dtype=np.uint8)).save(tmp_path / "b.png")
    px = np.asarray(import_raster(tmp_path / "b.png"))
    assert np.allclose(px, [[0, 1, 0.2]])


def test_png_export_roundtrip(tmp_path):
    px = np.linspace(0, 1, 64).reshape(8, 8)
    back = np.asarray(import_raster(export_raster(px, tmp_path / "c.png")))
    assert np.max(np.abs(back - px)) <= 0.5 / 65535 + 1e-7


def test_pgm_ascii_with_comments(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_text("P2\n# a comment\n3 2\n# another\n10\n0 5 10\n10 5 0\n")
    px = np.asarray(read_pgm(p))
    assert np.allclose(px, [[0, 0.5, 1], [1, 0.5, 0]])


def test_pgm_binary(tmp_path):
    p = tmp_path / "b.pgm"
    p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
    assert np.allclose(np.asarray(import_raster(p)), np.array([[0, 255], [128, 64]]) / 255)


def test_pgm_export_roundtrip(tmp_path):
    px = np.random.default_rng(0).random((5, 7))
    back = np.asarray(import_raster(export_raster(px, tmp_path / "c.pgm")))
    assert np.max(np.abs(back - px)) <= 0.5 / 65535 + 1e-7


def test_pgm_short_payload(tmp_path):
    p = tmp_path / "s.pgm"
    p.write_bytes(b"P5\n4 4\n255\n" + bytes(5))
    with pytest.raises(RasterFormatError, match="expected 27 bytes, got 16"):
        read_pgm(p)


def test_unsupported_extension(tmp_path):
    with pytest.raises(RasterFormatError):
        import_raster(tmp_path / "a.tiff")
    with pytest.raises(FileNotFoundError):
        import_raster(tmp_path / "missing.nimg")
