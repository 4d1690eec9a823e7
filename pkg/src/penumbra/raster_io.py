"""Raster file formats: FloatRaster (``.nimg``), PNG and PGM."""

from __future__ import annotations

import logging
import struct
from pathlib import Path

import numpy as np

from .grid import ImageGrid

log = logging.getLogger(__name__)

MAGIC = b"NIMG"
VERSION = 1
_HEADER = struct.Struct("<4sHII")  # 14 bytes

# Every path opened for reading, in order. Commands dump this for provenance.
READ_AUDIT: list = []


class RasterFormatError(ValueError):
    pass


def _audit(path: Path) -> None:
    READ_AUDIT.append(str(path))
    log.debug("read %s", path)


def write_float_raster(image, path) -> Path:
    px = np.asarray(image, dtype="<f4")
    h, w = px.shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, w, h))
        fh.write(np.ascontiguousarray(px).tobytes())
    return path


def read_float_raster(path) -> ImageGrid:
    path = Path(path)
    _audit(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise RasterFormatError(f"{path}: header truncated at byte {len(blob)} (need {_HEADER.size})")
    magic, version, w, h = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise RasterFormatError(f"{path}: bad magic {magic!r} at byte 0, expected {MAGIC!r}")
    if version != VERSION:
        raise RasterFormatError(f"{path}: unsupported version {version} at byte 4")
    if w == 0 or h == 0:
        raise RasterFormatError(f"{path}: zero extent {w}x{h} at byte 6")
    expected = _HEADER.size + 4 * w * h
    if len(blob) != expected:
        raise RasterFormatError(
            f"{path}: payload size mismatch, expected {expected} bytes total, got {len(blob)} "
            f"(payload starts at byte {_HEADER.size})"
        )
    px = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(h, w).astype(np.float32)
    return ImageGrid(px, {"source": str(path)})


def _pgm_tokens(data: bytes):
    pos = 0
    while True:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if pos >= len(data):
            return
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        yield start, pos, data[start:pos]


def read_pgm(path) -> ImageGrid:
    path = Path(path)
    _audit(path)
    data = path.read_bytes()
    tokens = _pgm_tokens(data)
    header = []
    end = 0
    for start, end, tok in tokens:
        header.append((start, tok))
        if len(header) == 4:
            break
    if len(header) < 4:
        raise RasterFormatError(f"{path}: truncated PGM header at byte {len(data)}")
    (_, magic), (o1, tw), (o2, th), (o3, tmax) = header
    if magic not in (b"P2", b"P5"):
        raise RasterFormatError(f"{path}: bad PGM magic {magic!r} at byte 0")
    try:
        w, h, maxval = int(tw), int(th), int(tmax)
    except ValueError as exc:
        raise RasterFormatError(f"{path}: malformed PGM header near byte {o1}") from exc
    if not (0 < maxval < 65536) or w <= 0 or h <= 0:
        raise RasterFormatError(f"{path}: invalid PGM header values near byte {o3}")
    if magic == b"P2":
        values = [tok for _, _, tok in tokens]
        if len(values) < w * h:
            raise RasterFormatError(f"{path}: expected {w * h} samples, found {len(values)}")
        px = np.array([int(v) for v in values[: w * h]], dtype=np.float64).reshape(h, w)
    else:
        offset = end + 1
        depth = 2 if maxval > 255 else 1
        expected = offset + w * h * depth
        if len(data) < expected:
            raise RasterFormatError(f"{path}: expected {expected} bytes, got {len(data)} (payload at byte {offset})")
        dt = ">u2" if depth == 2 else "u1"
        px = np.frombuffer(data, dtype=dt, count=w * h, offset=offset).reshape(h, w).astype(np.float64)
    return ImageGrid(px / maxval, {"source": str(path)})


def write_pgm(image, path, maxval: int = 65535) -> Path:
    px = np.clip(np.asarray(image, dtype=np.float64), 0, 1)
    q = np.rint(px * maxval).astype(int)
    h, w = q.shape
    lines = [f"P2\n{w} {h}\n{maxval}\n"]
    lines += [" ".join(map(str, row)) + "\n" for row in q]
    path = Path(path)
    path.write_text("".join(lines))
    return path


def read_png(path) -> ImageGrid:
    from PIL import Image

    path = Path(path)
    _audit(path)
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            px = np.asarray(im, dtype=np.float64) / 65535.0
        else:
            px = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return ImageGrid(px, {"source": str(path)})


def write_png(image, path, bits: int = 16) -> Path:
    from PIL import Image

    px = np.clip(np.asarray(image, dtype=np.float64), 0, 1)
    if bits == 16:
        arr = np.rint(px * 65535).astype(np.uint16)
    elif bits == 8:
        arr = np.rint(px * 255).astype(np.uint8)
    else:
        raise ValueError("bits must be 8 or 16")
    path = Path(path)
    Image.fromarray(arr).save(path)
    return path


_READERS = {".nimg": read_float_raster, ".png": read_png, ".pgm": read_pgm}
_WRITERS = {".nimg": write_float_raster, ".png": write_png, ".pgm": write_pgm}


def import_raster(path) -> ImageGrid:
    path = Path(path)
    reader = _READERS.get(path.suffix.lower())
    if reader is None:
        raise RasterFormatError(f"{path}: unsupported raster extension {path.suffix!r}")
    if not path.exists():
        raise FileNotFoundError(path)
    return reader(path)


def export_raster(image, path) -> Path:
    path = Path(path)
    writer = _WRITERS.get(path.suffix.lower())
    if writer is None:
        raise RasterFormatError(f"{path}: unsupported raster extension {path.suffix!r}")
    return writer(image, path)
