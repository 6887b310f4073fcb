"""File formats: HSC1 cubes, camera response tables, model containers, PNM previews.

HSC1 layout::

    HSC1 rows=<M> cols=<N> bands=<L> wavelengths=<w1>,<w2>,...\\n
    <M*N*L little-endian binary32 values, pixel-major>

Model container layout::

    HSM1\\n
    <one line of JSON: format version, config, transform, clusters, blob table>\\n
    <blobs, little-endian, at the declared offsets relative to the blob section>
"""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path

import numpy as np

from .core import FormatError, HyperCube, SpectralTransform

logger = logging.getLogger(__name__)

CUBE_MAGIC = b"HSC1"
MODEL_MAGIC = b"HSM1"
MODEL_VERSION = 1


# ---------------------------------------------------------------------------
# cubes


def encode_cube(cube: HyperCube) -> bytes:
    wl = ",".join(repr(float(w)) for w in cube.wavelengths)
    header = f"HSC1 rows={cube.rows} cols={cube.cols} bands={cube.bands} wavelengths={wl}\n"
    payload = np.ascontiguousarray(cube.data, dtype="<f4").tobytes()
    return header.encode("ascii") + payload


def decode_cube(raw: bytes) -> HyperCube:
    if raw[:4] != CUBE_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {CUBE_MAGIC!r}", offset=0)
    end = raw.find(b"\n")
    if end < 0:
        raise FormatError("header is not newline-terminated", offset=len(raw))
    try:
        fields = dict(tok.split("=", 1) for tok in raw[5:end].decode("ascii").split())
        rows, cols, bands = int(fields["rows"]), int(fields["cols"]), int(fields["bands"])
        wl = [float(w) for w in fields["wavelengths"].split(",")] if fields["wavelengths"] else []
    except (KeyError, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"malformed header: {exc}", offset=5) from exc
    if min(rows, cols, bands) < 1 or len(wl) != bands:
        raise FormatError(f"inconsistent header: rows={rows} cols={cols} bands={bands} "
                          f"with {len(wl)} wavelengths", offset=5)
    start = end + 1
    expected = rows * cols * bands * 4
    got = len(raw) - start
    if got < expected:
        raise FormatError(f"truncated payload: {got} of {expected} bytes", offset=len(raw))
    if got > expected:
        raise FormatError(f"{got - expected} trailing bytes after payload", offset=start + expected)
    data = np.frombuffer(raw, dtype="<f4", count=rows * cols * bands, offset=start)
    try:
        return HyperCube(data.astype(np.float64).reshape(rows, cols, bands), wl)
    except ValueError as exc:
        raise FormatError(str(exc), offset=start) from exc


def write_cube(cube: HyperCube, path) -> None:
    Path(path).write_bytes(encode_cube(cube))


def read_cube(path) -> HyperCube:
    return decode_cube(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# camera response tables


def read_response(path, normalize: bool = False) -> tuple[SpectralTransform, np.ndarray]:
    """Parse a ``wavelength_nm, r, g, b`` table into (T, wavelengths).

    Blank lines, ``#`` comments and a non-numeric header row are skipped.
    With ``normalize`` each channel row of T is scaled to sum to one.
    """
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        try:
            values = [float(p) for p in parts]
        except ValueError:
            if not rows:
                continue
            raise FormatError(f"{path}:{lineno}: non-numeric field in {line!r}")
        if len(values) != 4:
            raise FormatError(f"{path}:{lineno}: expected 4 fields, got {len(values)}")
        rows.append(values)
    if len(rows) < 2:
        raise FormatError(f"{path}: response table needs at least 2 rows, got {len(rows)}")
    table = np.array(rows)
    if not np.all(np.isfinite(table)):
        raise FormatError(f"{path}: non-finite values in response table")
    wl = table[:, 0]
    if not np.all(np.diff(wl) > 0):
        raise FormatError(f"{path}: wavelengths must be strictly increasing")
    matrix = table[:, 1:].T.copy()
    if normalize:
        sums = matrix.sum(axis=1, keepdims=True)
        if np.any(sums == 0):
            raise FormatError(f"{path}: cannot normalize a channel with zero total response")
        matrix = matrix / sums
    return SpectralTransform(matrix), wl


def write_response(t: SpectralTransform, wavelengths, path) -> None:
    if t.channels != 3:
        raise ValueError("response tables hold exactly three channels")
    lines = ["# wavelength_nm, r, g, b"]
    for w, col in zip(wavelengths, t.matrix.T):
        lines.append(", ".join(repr(float(v)) for v in (w, *col)))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# model container


def encode_model(meta: dict, blobs: dict[str, np.ndarray]) -> bytes:
    """Serialize JSON metadata plus named float64 matrices.

    Matrices are stored as little-endian binary64 so that saved posterior
    means and their transformed copies reload bit-exactly.
    """
    table = []
    chunks = []
    offset = 0
    for name in sorted(blobs):
        a = np.ascontiguousarray(blobs[name], dtype="<f8")
        data = a.tobytes()
        table.append({"name": name, "dtype": "<f8", "shape": list(a.shape),
                      "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    header = dict(meta, format_version=MODEL_VERSION, blobs=table)
    line = json.dumps(header, sort_keys=True, separators=(",", ":"))
    return MODEL_MAGIC + b"\n" + line.encode("ascii") + b"\n" + b"".join(chunks)


def decode_model(raw: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if raw[:5] != MODEL_MAGIC + b"\n":
        raise FormatError(f"bad magic {raw[:4]!r}, expected {MODEL_MAGIC!r}", offset=0)
    end = raw.find(b"\n", 5)
    if end < 0:
        raise FormatError("metadata line is not newline-terminated", offset=len(raw))
    try:
        meta = json.loads(raw[5:end].decode("ascii"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"malformed metadata: {exc}", offset=5) from exc
    if meta.get("format_version") != MODEL_VERSION:
        raise FormatError(f"unsupported model version {meta.get('format_version')!r}", offset=5)
    base = end + 1
    blobs = {}
    for entry in meta.pop("blobs"):
        start = base + entry["offset"]
        shape = tuple(entry["shape"])
        n = math.prod(shape)
        if entry["dtype"] != "<f8" or entry["nbytes"] != 8 * n:
            raise FormatError(f"blob {entry['name']!r}: inconsistent dtype/size", offset=start)
        if start + entry["nbytes"] > len(raw):
            raise FormatError(f"blob {entry['name']!r} truncated", offset=len(raw))
        blobs[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=n, offset=start) \
            .astype(np.float64).reshape(shape)
    return meta, blobs


# ---------------------------------------------------------------------------
# PNM previews


def _to_bytes(values: np.ndarray, value_range) -> np.ndarray:
    if value_range is None:
        lo, hi = float(values.min()), float(values.max())
        if hi == lo:
            logger.warning("constant image; writing all-zero preview")
            return np.zeros(values.shape, dtype=np.uint8)
    else:
        lo, hi = map(float, value_range)
        if hi <= lo:
            raise ValueError(f"empty display range ({lo}, {hi})")
    scaled = (values - lo) / (hi - lo) * 255.0
    # round half away from zero; after clipping all values are non-negative
    return np.floor(np.clip(scaled, 0.0, 255.0) + 0.5).astype(np.uint8)


def export_band_pnm(cube: HyperCube, band: int, path, value_range=None) -> None:
    """8-bit P5 map of one band, min-max scaled unless ``value_range`` is given."""
    if not 0 <= band < cube.bands:
        raise IndexError(f"band {band} outside 0..{cube.bands - 1}")
    img = _to_bytes(cube.data[:, :, band], value_range)
    header = f"P5\n{cube.cols} {cube.rows}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())


def export_rgb_pnm(cube3: HyperCube, path, value_range=None) -> None:
    if cube3.bands != 3:
        raise ValueError(f"RGB preview needs 3 bands, cube has {cube3.bands}")
    img = _to_bytes(cube3.data, value_range)
    header = f"P6\n{cube3.cols} {cube3.rows}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())
