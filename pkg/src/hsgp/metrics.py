"""Reconstruction error metrics and the key=value report format."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .core import HyperCube


def _arrays(est, gt):
    a = est.data if isinstance(est, HyperCube) else np.asarray(est, dtype=np.float64)
    b = gt.data if isinstance(gt, HyperCube) else np.asarray(gt, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: estimate {a.shape} vs ground truth {b.shape}")
    return a, b


def eightbit_scale(gt) -> float:
    """Factor mapping the ground truth's global maximum to 255 (1 if the maximum is not positive)."""
    peak = float(np.max(gt))
    return 255.0 / peak if peak > 0 else 1.0


def rmse(est, gt, eightbit: bool = False) -> float:
    """Root mean squared error over every entry.

    With ``eightbit`` both arrays are first scaled jointly so that the
    ground-truth maximum maps to 255.
    """
    a, b = _arrays(est, gt)
    diff = a - b
    if eightbit:
        diff = diff * eightbit_scale(b)
    return float(np.sqrt(np.mean(diff * diff)))


def relative_rmse(est, gt, floor: float | None = None) -> float:
    a, b = _arrays(est, gt)
    if floor is None:
        floor = 1e-3 * float(np.max(b))
    denom = np.maximum(b, floor)
    if np.any(denom <= 0):
        raise ValueError("relative RMSE needs a positive floor")
    rel = (a - b) / denom
    return float(np.sqrt(np.mean(rel * rel)))


def _unit_angle(ua, ub):
    # half-angle form: accurate near 0 and 180 degrees, where arccos of the
    # cosine loses about half the significant digits
    return np.degrees(2.0 * np.arctan2(np.linalg.norm(ua - ub, axis=-1),
                                       np.linalg.norm(ua + ub, axis=-1)))


def sam(est_pixel, gt_pixel) -> float:
    """Angle in degrees between two non-zero spectra."""
    a = np.asarray(est_pixel, dtype=np.float64).ravel()
    b = np.asarray(gt_pixel, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("SAM is undefined for a zero spectrum")
    return float(_unit_angle(a / na, b / nb))


def sam_map(est, gt) -> np.ndarray:
    """Per-pixel angles in degrees, NaN where either spectrum is zero."""
    a, b = _arrays(est, gt)
    a = a.reshape(-1, a.shape[-1])
    b = b.reshape(-1, b.shape[-1])
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    valid = (na > 0) & (nb > 0)
    out = np.full(a.shape[0], np.nan)
    out[valid] = _unit_angle(a[valid] / na[valid, None], b[valid] / nb[valid, None])
    return out


def sam_mean(est, gt) -> tuple[float, int]:
    """Mean angle over valid pixels and the number of skipped (zero) pixels."""
    angles = sam_map(est, gt)
    valid = ~np.isnan(angles)
    if not valid.any():
        raise ValueError("no pixel has a non-zero spectrum in both images")
    return float(angles[valid].mean()), int((~valid).sum())


def per_band_rmse(est, gt, eightbit: bool = False) -> list[float]:
    a, b = _arrays(est, gt)
    diff = (a - b).reshape(-1, a.shape[-1])
    if eightbit:
        diff = diff * eightbit_scale(b)
    return np.sqrt(np.mean(diff * diff, axis=0)).tolist()


@dataclass
class ReconstructionReport:
    rmse_8bit: float
    relative_rmse: float
    sam_degrees_mean: float
    per_band_rmse: list[float]
    negative_fraction: float
    infeasible_pixels: int
    sam_skipped_pixels: int = 0
    rmse_scaling: str = "joint, ground-truth max -> 255"
    config: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "config":
                for key in sorted(value):
                    lines.append(f"config.{key}={value[key]}")
            elif f.name == "per_band_rmse":
                lines.append(f"{f.name}=" + ",".join(repr(float(v)) for v in value))
            elif isinstance(value, float):
                lines.append(f"{f.name}={value!r}")
            else:
                lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ReconstructionReport":
        raw, config = {}, {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition("=")
            if key.startswith("config."):
                config[key[len("config."):]] = value
            else:
                raw[key] = value
        return cls(
            rmse_8bit=float(raw["rmse_8bit"]),
            relative_rmse=float(raw["relative_rmse"]),
            sam_degrees_mean=float(raw["sam_degrees_mean"]),
            per_band_rmse=[float(v) for v in raw["per_band_rmse"].split(",") if v],
            negative_fraction=float(raw["negative_fraction"]),
            infeasible_pixels=int(raw["infeasible_pixels"]),
            sam_skipped_pixels=int(raw.get("sam_skipped_pixels", 0)),
            rmse_scaling=raw.get("rmse_scaling", ""),
            config=config,
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


def evaluate(est, gt, infeasible_pixels: int = 0, eightbit: bool = True,
             config: dict | None = None) -> ReconstructionReport:
    a, b = _arrays(est, gt)
    mean_sam, skipped = sam_mean(a, b)
    return ReconstructionReport(
        rmse_8bit=rmse(a, b, eightbit=eightbit),
        relative_rmse=relative_rmse(a, b),
        sam_degrees_mean=mean_sam,
        per_band_rmse=per_band_rmse(a, b, eightbit=eightbit),
        negative_fraction=float(np.mean(a < 0)),
        infeasible_pixels=int(infeasible_pixels),
        sam_skipped_pixels=skipped,
        rmse_scaling="joint, ground-truth max -> 255" if eightbit else "none",
        config=dict(config or {}),
    )
