"""Synthetic scenes drawn from the sparse linear mixing model, for desk-scale testing."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import HyperCube, SpectralTransform


@dataclass(frozen=True)
class SynthSpec:
    L: int = 31
    M: int = 64
    N: int = 64
    K_true: int = 8
    smoothness: tuple[float, float] = (3.0, 6.0)  # bump widths in channels
    sparsity: int = 2
    noise_precision: float = 1e4
    seed: int = 0
    scene_seed: int | None = None  # codes/noise stream; defaults to seed
    block: int = 8
    wavelength_start: float = 400.0
    wavelength_step: float = 10.0

    def __post_init__(self):
        if self.K_true < 1:
            raise ValueError("K_true must be at least 1")
        if not 1 <= self.sparsity <= self.K_true:
            raise ValueError("sparsity must lie in 1..K_true")
        if min(self.L, self.M, self.N, self.block) < 1:
            raise ValueError("dimensions must be positive")
        if not self.noise_precision > 0:
            raise ValueError("noise precision must be positive (use inf for noiseless)")
        lo, hi = self.smoothness
        if not 0 < lo <= hi:
            raise ValueError("smoothness must be an increasing pair of positive widths")

    @property
    def wavelengths(self) -> np.ndarray:
        return self.wavelength_start + self.wavelength_step * np.arange(self.L)


@dataclass(frozen=True)
class SynthScene:
    cube: HyperCube
    atoms: np.ndarray  # (L, K_true), unit l2 norm
    codes: np.ndarray  # (K_true, M*N), pixel order


def make_atoms(L: int, K: int, widths=(3.0, 6.0), rng=None) -> np.ndarray:
    """K smooth non-negative spectra, each a sum of 1-3 Gaussian bumps, unit norm."""
    rng = np.random.default_rng(rng)
    x = np.arange(L, dtype=np.float64)
    atoms = np.zeros((L, K))
    for k in range(K):
        for _ in range(int(rng.integers(1, 4))):
            centre = rng.uniform(0, L - 1)
            width = rng.uniform(*widths)
            atoms[:, k] += rng.uniform(0.3, 1.0) * np.exp(-0.5 * ((x - centre) / width) ** 2)
        atoms[:, k] /= np.linalg.norm(atoms[:, k])
    return atoms


def make_codes(spec: SynthSpec, rng) -> np.ndarray:
    """Block-constant supports with per-pixel jitter, so image patches form clusters."""
    M, N, b = spec.M, spec.N, spec.block
    codes = np.zeros((spec.K_true, M, N))
    for r0 in range(0, M, b):
        for c0 in range(0, N, b):
            support = rng.choice(spec.K_true, size=spec.sparsity, replace=False)
            base = rng.uniform(0.3, 1.0, size=spec.sparsity)
            h, w = min(b, M - r0), min(b, N - c0)
            jitter = rng.uniform(0.8, 1.2, size=(spec.sparsity, h, w))
            codes[support, r0:r0 + h, c0:c0 + w] = base[:, None, None] * jitter
    return codes.reshape(spec.K_true, M * N)


def generate(spec: SynthSpec) -> SynthScene:
    atoms = make_atoms(spec.L, spec.K_true, spec.smoothness, np.random.default_rng(spec.seed))
    rng = np.random.default_rng(spec.seed if spec.scene_seed is None else spec.scene_seed)
    codes = make_codes(spec, rng)
    pixels = (atoms @ codes).T
    if math.isfinite(spec.noise_precision):
        pixels = pixels + rng.standard_normal(pixels.shape) / math.sqrt(spec.noise_precision)
    pixels = np.maximum(pixels, 0.0)
    cube = HyperCube.from_pixels(pixels, spec.M, spec.N, spec.wavelengths)
    return SynthScene(cube, atoms, codes)


def random_response(L: int, seed: int = 0) -> SpectralTransform:
    """A smooth, non-negative 3 x L camera-like response (rows r, g, b), each row summing to 1."""
    rng = np.random.default_rng(seed)
    x = np.arange(L, dtype=np.float64)
    rows = []
    for centre in (0.8, 0.5, 0.2):
        mu = (centre + rng.uniform(-0.05, 0.05)) * (L - 1)
        width = rng.uniform(0.08, 0.14) * L
        row = np.exp(-0.5 * ((x - mu) / width) ** 2)
        rows.append(row / row.sum())
    return SpectralTransform(np.array(rows))


def mean_abs_second_difference(spectra) -> float:
    """Mean |phi[j-1] - 2 phi[j] + phi[j+1]| over bands and columns of an (L, K) array."""
    a = np.asarray(spectra, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    return float(np.abs(np.diff(a, n=2, axis=0)).mean())
