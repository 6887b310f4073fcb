"""Domain types shared by every stage of the recovery pipeline.

Cubes are stored pixel-major: ``data[row, col, band]`` in C order, so a
pixel's spectrum is a contiguous run of ``bands`` values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class HSGPError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(HSGPError, ValueError):
    """Malformed file or inconsistent header."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(HSGPError, ArithmeticError):
    """Non-finite values or failed factorizations during inference."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class HyperCube:
    """An M x N x L image with a strictly increasing wavelength grid."""

    data: np.ndarray
    wavelengths: np.ndarray

    def __post_init__(self):
        data = _frozen(self.data)
        wl = _frozen(self.wavelengths).ravel()
        if data.ndim != 3:
            raise ValueError(f"cube data must be 3-D (rows, cols, bands), got shape {data.shape}")
        if wl.size != data.shape[2]:
            raise ValueError(f"{wl.size} wavelengths for {data.shape[2]} bands")
        if wl.size > 1 and not np.all(np.diff(wl) > 0):
            raise ValueError("wavelengths must be strictly increasing")
        if not np.all(np.isfinite(data)) or not np.all(np.isfinite(wl)):
            raise ValueError("cube contains non-finite values")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "wavelengths", wl)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    def pixels(self) -> np.ndarray:
        """Read-only (rows*cols, bands) view in pixel order."""
        return self.data.reshape(-1, self.bands)

    @classmethod
    def from_pixels(cls, pixels, rows: int, cols: int, wavelengths) -> "HyperCube":
        pixels = np.asarray(pixels, dtype=np.float64)
        return cls(pixels.reshape(rows, cols, -1), wavelengths)

    def __eq__(self, other):
        if not isinstance(other, HyperCube):
            return NotImplemented
        return (self.data.shape == other.data.shape
                and np.array_equal(self.data, other.data)
                and np.array_equal(self.wavelengths, other.wavelengths))

    __hash__ = None


def channel_grid(n: int) -> np.ndarray:
    """Nominal wavelength grid (0, 1, ..., n-1) for cubes without a physical one, e.g. RGB."""
    return np.arange(n, dtype=np.float64)


@dataclass(frozen=True)
class Spectrum:
    values: np.ndarray
    wavelengths: np.ndarray | None = None

    def __post_init__(self):
        values = _frozen(self.values).ravel()
        if not np.all(np.isfinite(values)):
            raise ValueError("spectrum contains non-finite values")
        if self.wavelengths is not None and len(self.wavelengths) != values.size:
            raise ValueError("spectrum length does not match its wavelength grid")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class SpectralTransform:
    """Linear map from L hyperspectral bands to l camera channels (rows)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.ndim != 2:
            raise ValueError(f"transform must be 2-D, got shape {m.shape}")
        if m.shape[0] > m.shape[1]:
            raise ValueError(f"transform maps {m.shape[1]} bands to {m.shape[0]} channels; "
                             "channels must not exceed bands")
        if not np.all(np.isfinite(m)):
            raise ValueError("transform contains non-finite values")
        object.__setattr__(self, "matrix", m)

    @property
    def channels(self) -> int:
        return self.matrix.shape[0]

    @property
    def bands(self) -> int:
        return self.matrix.shape[1]

    def apply_cube(self, cube: HyperCube, wavelengths=None) -> HyperCube:
        """Band-wise application over a whole cube."""
        if cube.bands != self.bands:
            raise ValueError(f"transform expects {self.bands} bands, cube has {cube.bands}")
        out = cube.pixels() @ self.matrix.T
        if wavelengths is None:
            wavelengths = channel_grid(self.channels)
        return HyperCube.from_pixels(out, cube.rows, cube.cols, wavelengths)


@dataclass(frozen=True)
class Patch:
    side: int
    bands: int
    vector: np.ndarray
    origin: tuple[int, int] = field(default=(0, 0))

    def __post_init__(self):
        v = _frozen(self.vector).ravel()
        if v.size != self.side * self.side * self.bands:
            raise ValueError(f"patch vector has {v.size} values, expected "
                             f"{self.side}*{self.side}*{self.bands}")
        object.__setattr__(self, "vector", v)

    def pixels(self) -> np.ndarray:
        return self.vector.reshape(self.side * self.side, self.bands)


def pixel_at(cube: HyperCube, row: int, col: int) -> Spectrum:
    if not (0 <= row < cube.rows and 0 <= col < cube.cols):
        raise IndexError(f"pixel ({row}, {col}) outside {cube.rows}x{cube.cols} cube")
    return Spectrum(cube.data[row, col], cube.wavelengths)


def apply_transform(t: SpectralTransform, s) -> Spectrum:
    values = s.values if isinstance(s, Spectrum) else np.asarray(s, dtype=np.float64)
    if values.ndim != 1 or values.size != t.bands:
        raise ValueError(f"spectrum of length {values.size} does not match "
                         f"transform with {t.bands} columns")
    return Spectrum(t.matrix @ values)
