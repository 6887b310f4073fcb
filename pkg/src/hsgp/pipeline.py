"""Training and reconstruction: clustered GP dictionaries to RGB-to-spectrum recovery."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import cubeio
from .coder import code_min_l1
from .core import FormatError, HyperCube, SpectralTransform
from .gpmodel import ModelConfig, run_gibbs
from .preprocess import (PatchSet, assign_cluster, atom_budget, extract_patches, grid_origins,
                         kmeans, rgb_centroids, subsample_pixels)
from .priors import factorize

logger = logging.getLogger(__name__)

# stream ids for SeedSequence so every stage draws from its own RNG stream
_KMEANS, _SUBSAMPLE, _PRIORS, _GIBBS = range(4)


@dataclass(frozen=True)
class RunConfig:
    clusters: int = 10
    patch: int = 8
    k_total: int = 1000
    pixel_fraction: float = 0.01
    stride: int = 2
    dl_variant: bool = False
    seed: int = 0
    delta: float = 0.01
    delta1: float = 1e-21
    epochs: int = 10
    kmeans_center: bool = False
    kmeans_iters: int = 100
    kmeans_tol: float = 1e-6
    kmeans_restarts: int = 10
    normalize_atoms: bool = True
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.clusters < 1 or self.patch < 1 or self.stride < 1:
            raise ValueError("clusters, patch and stride must be positive")
        if self.k_total < self.clusters:
            raise ValueError("k_total must be at least the number of clusters")
        if not 0 < self.pixel_fraction <= 1:
            raise ValueError("pixel_fraction must lie in (0, 1]")
        if self.delta < 0 or self.delta1 < 0:
            raise ValueError("delta and delta1 must be non-negative")
        if self.epochs < 0 or self.kmeans_iters < 1 or self.kmeans_restarts < 1:
            raise ValueError("epochs must be >= 0, kmeans_iters and kmeans_restarts >= 1")

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "model"}
        # the sampler seed is derived per cluster from the run seed
        out.update({k: v for k, v in self.model.to_dict().items() if k != "seed"})
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        model_keys = {f.name for f in fields(ModelConfig)}
        run_keys = {f.name for f in fields(cls)} - {"model"}
        unknown = set(d) - model_keys - run_keys
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        model = ModelConfig(**{k: v for k, v in d.items() if k in model_keys and k != "seed"})
        return cls(model=model, **{k: v for k, v in d.items() if k in run_keys})


def _stream_seed(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0])


@dataclass
class ClusterModel:
    phi: np.ndarray        # (L, K) posterior mean atoms
    phi_rgb: np.ndarray    # (l, K) = T @ phi
    centroid: np.ndarray   # (p*p*l,) mean transformed training patch
    usage: np.ndarray      # (K,) mean pi_k, or normalized code weight for the DL variant
    n_patches: int = 0
    n_train: int = 0
    lambda_eps: float = float("nan")

    @property
    def n_atoms(self) -> int:
        return self.phi.shape[1]


@dataclass
class TrainedModel:
    transform: SpectralTransform
    wavelengths: np.ndarray
    clusters: list[ClusterModel]
    config: RunConfig

    @property
    def bands(self) -> int:
        return self.transform.bands

    @property
    def patch(self) -> int:
        return self.config.patch

    def centroids(self) -> np.ndarray:
        return np.stack([c.centroid for c in self.clusters])


# ---------------------------------------------------------------------------
# training


def _fit_cluster(job):
    c, Y, K, config, wavelengths = job
    t0 = time.perf_counter()
    priors = factorize(Y, K, config.delta, _stream_seed(config.seed, _PRIORS, c), config.epochs)
    if config.dl_variant:
        phi = priors.D.copy()
        w = priors.A.sum(axis=1)
        usage = w / w.sum() if w.sum() > 0 else w
        lam = float("nan")
    else:
        mc = replace(config.model, seed=_stream_seed(config.seed, _GIBBS, c))
        post = run_gibbs(Y, priors, mc, wavelengths=wavelengths)
        phi, usage, lam = post.Phi_mean, post.usage, post.lambda_eps
    if config.normalize_atoms:
        norms = np.linalg.norm(phi, axis=0)
        phi = phi / np.where(norms > 0, norms, 1.0)
    logger.info("cluster %d: K=%d, %d training spectra, %.1fs", c, K, Y.shape[1],
                time.perf_counter() - t0)
    return phi, usage, lam


def _map(fn, jobs, threads):
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))


def train(cubes, transform: SpectralTransform, config: RunConfig = RunConfig(),
          threads: int = 1) -> TrainedModel:
    """Cluster disjoint training patches, learn a GP atom set per cluster, transform it."""
    if isinstance(cubes, HyperCube):
        cubes = [cubes]
    if not cubes:
        raise ValueError("need at least one training cube")
    wl = cubes[0].wavelengths
    for cube in cubes:
        if not np.array_equal(cube.wavelengths, wl):
            raise ValueError("training cubes must share one wavelength grid")
        if cube.bands != transform.bands:
            raise ValueError(f"cube has {cube.bands} bands, transform expects {transform.bands}")
    p = config.patch
    patches = PatchSet.concat([extract_patches(c, p, p, i) for i, c in enumerate(cubes)])
    C = config.clusters
    if C > len(patches):
        raise ValueError(f"{len(patches)} training patches cannot form {C} clusters")
    clustering = kmeans(patches, C, _stream_seed(config.seed, _KMEANS), config.kmeans_iters,
                        config.kmeans_tol, center=config.kmeans_center,
                        n_init=config.kmeans_restarts)
    sizes = clustering.sizes()
    budget = atom_budget(sizes, config.k_total)
    jobs = []
    for c in range(C):
        members = [patches.patches[i] for i in np.flatnonzero(clustering.assignment == c)]
        Y = subsample_pixels(members, config.pixel_fraction, _stream_seed(config.seed, _SUBSAMPLE, c))
        if Y.shape[1] < budget[c]:
            logger.warning("cluster %d: %d sampled spectra for %d atoms; using all pixels",
                           c, Y.shape[1], budget[c])
            Y = subsample_pixels(members, 1.0)
        jobs.append((c, Y, budget[c], config, wl))
    results = _map(_fit_cluster, jobs, threads)
    centroids = rgb_centroids(clustering, patches, transform)
    clusters = []
    for c, ((phi, usage, lam), job) in enumerate(zip(results, jobs)):
        clusters.append(ClusterModel(phi, transform.matrix @ phi, centroids[c], usage,
                                     int(sizes[c]), job[1].shape[1], lam))
    return TrainedModel(transform, wl, clusters, config)


# ---------------------------------------------------------------------------
# model persistence


def model_to_bytes(model: TrainedModel) -> bytes:
    meta = {
        "config": model.config.to_dict(),
        "wavelengths": [float(w) for w in model.wavelengths],
        "clusters": [{"K": cm.n_atoms, "n_patches": cm.n_patches, "n_train": cm.n_train,
                      "lambda_eps": None if np.isnan(cm.lambda_eps) else cm.lambda_eps}
                     for cm in model.clusters],
        "k_total": sum(cm.n_atoms for cm in model.clusters),
    }
    blobs = {"transform": model.transform.matrix}
    for c, cm in enumerate(model.clusters):
        blobs[f"cluster{c:04d}.phi"] = cm.phi
        blobs[f"cluster{c:04d}.phi_rgb"] = cm.phi_rgb
        blobs[f"cluster{c:04d}.centroid"] = cm.centroid
        blobs[f"cluster{c:04d}.usage"] = cm.usage
    return cubeio.encode_model(meta, blobs)


def model_from_bytes(raw: bytes) -> TrainedModel:
    meta, blobs = cubeio.decode_model(raw)
    try:
        config = RunConfig.from_dict(meta["config"])
        transform = SpectralTransform(blobs["transform"])
        clusters = []
        for c, info in enumerate(meta["clusters"]):
            key = f"cluster{c:04d}"
            lam = info["lambda_eps"]
            cm = ClusterModel(blobs[f"{key}.phi"], blobs[f"{key}.phi_rgb"], blobs[f"{key}.centroid"],
                              blobs[f"{key}.usage"], info["n_patches"], info["n_train"],
                              float("nan") if lam is None else lam)
            if cm.phi.shape != (transform.bands, info["K"]) or \
                    cm.phi_rgb.shape != (transform.channels, info["K"]):
                raise FormatError(f"cluster {c}: matrix shapes disagree with K={info['K']}")
            clusters.append(cm)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"inconsistent model container: {exc}") from exc
    if sum(cm.n_atoms for cm in clusters) != meta["k_total"]:
        raise FormatError("per-cluster atom counts do not add up to k_total")
    return TrainedModel(transform, np.array(meta["wavelengths"]), clusters, config)


def save_model(model: TrainedModel, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> TrainedModel:
    return model_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# reconstruction


@dataclass
class Reconstruction:
    cube: HyperCube
    infeasible_pixels: int
    patch_clusters: list[tuple[tuple[int, int], int]]
    patch_estimates: list[np.ndarray] | None = None

    @property
    def negative_fraction(self) -> float:
        return float(np.mean(self.cube.data < 0))


def covering_origins(extent: int, p: int, stride: int) -> list[int]:
    """Stride grid plus a final origin clamped to extent - p so the margin is covered."""
    origins = grid_origins(extent, p, stride)
    if origins[-1] != extent - p:
        origins.append(extent - p)
    return origins


def _code_pixels(job):
    pixels, phi, phi_rgb, delta1 = job
    est = np.empty((pixels.shape[0], phi.shape[0]))
    infeasible = np.zeros(pixels.shape[0], dtype=bool)
    for n, y in enumerate(pixels):
        code = code_min_l1(y, phi_rgb, delta1)
        est[n] = phi[:, code.indices] @ code.values
        infeasible[n] = not code.feasible
    return est, infeasible


def reconstruct(model: TrainedModel, rgb: HyperCube, stride: int = 2, threads: int = 1,
                keep_patch_estimates: bool = False) -> Reconstruction:
    """Recover an L-band cube from an RGB cube by per-pixel sparse coding.

    Every stride-grid patch is matched to the nearest RGB centroid; each of
    its pixels is coded over that cluster's transformed atoms and mapped back
    with the spectral atoms. Overlapping estimates are averaged.
    """
    p = model.patch
    if rgb.bands != model.transform.channels:
        raise ValueError(f"input has {rgb.bands} channels, model expects {model.transform.channels}")
    if stride < 1 or stride > p:
        raise ValueError(f"stride must lie in 1..{p} (patch side), got {stride}")
    if p > min(rgb.rows, rgb.cols):
        raise ValueError(f"image {rgb.rows}x{rgb.cols} is smaller than the {p}x{p} patch")
    M, N = rgb.rows, rgb.cols
    centroids = model.centroids()
    rows = covering_origins(M, p, stride)
    cols = covering_origins(N, p, stride)
    pix_index = np.arange(M * N).reshape(M, N)

    patch_clusters = []
    needed = [set() for _ in model.clusters]
    for r in rows:
        for c in cols:
            k = assign_cluster(rgb.data[r:r + p, c:c + p].ravel(), centroids)
            patch_clusters.append(((r, c), k))
            needed[k].update(pix_index[r:r + p, c:c + p].ravel().tolist())

    flat = rgb.pixels()
    jobs, lookup = [], []
    for k, idx in enumerate(needed):
        idx = np.array(sorted(idx), dtype=np.int64)
        pos = np.full(M * N, -1, dtype=np.int64)
        pos[idx] = np.arange(idx.size)
        lookup.append(pos)
        cm = model.clusters[k]
        jobs.append((flat[idx], cm.phi, cm.phi_rgb, model.config.delta1))
    coded = _map(_code_pixels, jobs, threads)

    L = model.bands
    acc = np.zeros((M * N, L))
    count = np.zeros(M * N, dtype=np.int64)
    bad = np.zeros(M * N, dtype=bool)
    logs = [] if keep_patch_estimates else None
    for (r, c), k in patch_clusters:
        idx = pix_index[r:r + p, c:c + p].ravel()
        rows_k = lookup[k][idx]
        est, infeasible = coded[k]
        acc[idx] += est[rows_k]
        count[idx] += 1
        bad[idx] |= infeasible[rows_k]
        if logs is not None:
            logs.append(est[rows_k].copy())
    if np.any(count == 0):
        raise AssertionError("reconstruction left pixels uncovered")
    out = HyperCube.from_pixels(acc / count[:, None], M, N, model.wavelengths)
    return Reconstruction(out, int(bad.sum()), patch_clusters, logs)


# ---------------------------------------------------------------------------
# evaluation protocol helpers


def simulate_rgb(cube: HyperCube, transform: SpectralTransform) -> HyperCube:
    return transform.apply_cube(cube)


def estimate_transform(Y, Yh) -> SpectralTransform:
    """Least-squares T with Y ~ T Yh via the Moore-Penrose inverse: T = (pinv(Yh^T) Y^T)^T."""
    Y = np.asarray(Y, dtype=np.float64)
    Yh = np.asarray(Yh, dtype=np.float64)
    if Y.ndim != 2 or Yh.ndim != 2 or Y.shape[1] != Yh.shape[1]:
        raise ValueError(f"need matching column counts, got {Y.shape} and {Yh.shape}")
    return SpectralTransform((np.linalg.pinv(Yh.T) @ Y.T).T)
