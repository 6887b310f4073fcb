"""Patch extraction, K-Means clustering and per-cluster pixel subsampling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import HyperCube, Patch, SpectralTransform


@dataclass(frozen=True)
class PatchSet:
    patches: list[Patch]
    source_ids: list[int]

    def __post_init__(self):
        if self.patches:
            side, bands = self.patches[0].side, self.patches[0].bands
            if any(p.side != side or p.bands != bands for p in self.patches):
                raise ValueError("patches in a PatchSet must share side and band count")
        if len(self.source_ids) != len(self.patches):
            raise ValueError("one source id per patch required")

    def __len__(self):
        return len(self.patches)

    @property
    def side(self) -> int:
        return self.patches[0].side

    @property
    def bands(self) -> int:
        return self.patches[0].bands

    def matrix(self) -> np.ndarray:
        """(n_patches, p*p*bands) matrix of flattened patches."""
        return np.stack([p.vector for p in self.patches])

    @staticmethod
    def concat(sets: list["PatchSet"]) -> "PatchSet":
        patches, ids = [], []
        for s in sets:
            patches.extend(s.patches)
            ids.extend(s.source_ids)
        return PatchSet(patches, ids)


@dataclass(frozen=True)
class Clustering:
    assignment: np.ndarray
    centroids: np.ndarray
    objective_trace: tuple[float, ...] = ()

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_clusters)


def grid_origins(extent: int, p: int, stride: int) -> list[int]:
    return list(range(0, extent - p + 1, stride))


def extract_patches(cube: HyperCube, p: int, stride: int, source_id: int = 0) -> PatchSet:
    """All p x p patches whose origins lie on the stride grid, row-major."""
    if p < 1 or stride < 1:
        raise ValueError("patch side and stride must be positive")
    if p > min(cube.rows, cube.cols):
        raise ValueError(f"patch side {p} exceeds image size {cube.rows}x{cube.cols}")
    patches = []
    for r in grid_origins(cube.rows, p, stride):
        for c in grid_origins(cube.cols, p, stride):
            patches.append(Patch(p, cube.bands, cube.data[r:r + p, c:c + p].ravel(), (r, c)))
    return PatchSet(patches, [source_id] * len(patches))


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # direct differences, one centroid at a time: exact ties and bounded memory
    out = np.empty((x.shape[0], centroids.shape[0]))
    for c, mu in enumerate(centroids):
        out[:, c] = ((x - mu) ** 2).sum(axis=1)
    return out


def _kmeanspp(x: np.ndarray, C: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    idx = [int(rng.integers(n))]
    d2 = ((x - x[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, C):
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with a chosen center
            rest = np.setdiff1d(np.arange(n), idx)
            nxt = int(rest[0])
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        idx.append(nxt)
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(axis=1))
    return x[idx].copy()


def kmeans(patchset: PatchSet | np.ndarray, C: int, seed: int = 0, max_iters: int = 100,
           tol: float = 1e-6, center: bool = False, n_init: int = 1) -> Clustering:
    """Lloyd's algorithm with k-means++ seeding.

    Parameters
    ----------
    patchset : PatchSet or array of shape (n, dim)
    C : number of clusters, at most the number of vectors
    tol : stop when the largest centroid shift falls below ``tol`` times the
        largest centroid norm
    center : subtract each vector's mean value before clustering
    n_init : independent seedings; the run with the lowest final objective
        is kept (earliest run on ties)

    The squared-Euclidean objective is checked to be non-increasing after
    every assignment step.
    """
    x = patchset.matrix() if isinstance(patchset, PatchSet) else np.asarray(patchset, dtype=float)
    n = x.shape[0]
    if not 1 <= C <= n:
        raise ValueError(f"cannot form {C} clusters from {n} vectors")
    if n_init < 1:
        raise ValueError("n_init must be at least 1")
    if center:
        x = x - x.mean(axis=1, keepdims=True)
    rng = np.random.default_rng(seed)
    best, best_obj = None, math.inf
    for _ in range(n_init):
        run = _lloyd(x, C, rng, max_iters, tol)
        d2 = _sq_dists(x, run.centroids)
        obj = float(d2[np.arange(n), run.assignment].sum())
        if obj < best_obj:
            best, best_obj = run, obj
    return best


def _lloyd(x: np.ndarray, C: int, rng, max_iters: int, tol: float) -> Clustering:
    n = x.shape[0]
    centroids = _kmeanspp(x, C, rng)
    trace = []
    prev = math.inf
    for _ in range(max_iters):
        d2 = _sq_dists(x, centroids)
        assign = d2.argmin(axis=1)
        obj = float(d2[np.arange(n), assign].sum())
        if obj > prev * (1 + 1e-12) + 1e-12:
            raise AssertionError(f"k-means objective increased: {prev} -> {obj}")
        trace.append(obj)
        prev = obj
        new = np.empty_like(centroids)
        own = d2[np.arange(n), assign]
        for c in range(C):
            members = assign == c
            if members.any():
                new[c] = x[members].mean(axis=0)
            else:
                # reseed with the point worst served by its current centroid
                far = int(own.argmax())
                new[c] = x[far]
                own[far] = -1.0
        shift = np.sqrt(((new - centroids) ** 2).sum(axis=1)).max()
        scale = max(np.sqrt((new ** 2).sum(axis=1)).max(), 1e-300)
        centroids = new
        if shift < tol * scale:
            break
    d2 = _sq_dists(x, centroids)
    assign = d2.argmin(axis=1)
    sizes = np.bincount(assign, minlength=C)
    empty = np.flatnonzero(sizes == 0)
    if empty.size:
        # hand each empty cluster the worst-served point of a cluster that can spare one
        own = d2[np.arange(n), assign]
        for c in empty:
            donors = sizes[assign] > 1
            far = int(np.flatnonzero(donors)[own[donors].argmax()])
            sizes[assign[far]] -= 1
            sizes[c] += 1
            assign[far] = c
            own[far] = -1.0
        for c in range(C):
            centroids[c] = x[assign == c].mean(axis=0)
    return Clustering(assign, centroids, tuple(trace))


def subsample_pixels(patches: list[Patch], fraction: float, seed: int = 0) -> np.ndarray:
    """Pick ceil(fraction * p^2) pixels per patch without replacement.

    Returns an (L, n) matrix whose columns are the chosen spectra, patches in
    input order.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    cols = []
    for patch in patches:
        px = patch.pixels()
        n = px.shape[0]
        take = math.ceil(fraction * n - 1e-12)
        if take >= n:
            cols.append(px)
        else:
            cols.append(px[np.sort(rng.choice(n, size=take, replace=False))])
    if not cols:
        return np.zeros((0, 0))
    return np.concatenate(cols, axis=0).T.copy()


def transform_patch(vector: np.ndarray, t: SpectralTransform) -> np.ndarray:
    return (vector.reshape(-1, t.bands) @ t.matrix.T).ravel()


def rgb_centroids(clustering: Clustering, patchset: PatchSet, t: SpectralTransform) -> np.ndarray:
    """Per-cluster mean of the spectrally transformed training patches, shape (C, p*p*l)."""
    x = patchset.matrix()
    rgb = (x.reshape(len(patchset), -1, t.bands) @ t.matrix.T).reshape(len(patchset), -1)
    out = np.zeros((clustering.n_clusters, rgb.shape[1]))
    for c in range(clustering.n_clusters):
        members = clustering.assignment == c
        if members.any():
            out[c] = rgb[members].mean(axis=0)
    return out


def assign_cluster(rgb_patch: np.ndarray, centroids: np.ndarray) -> int:
    """Nearest centroid by Euclidean distance; ties go to the lowest id."""
    rgb_patch = np.asarray(rgb_patch, dtype=float).ravel()
    if centroids.shape[1] != rgb_patch.size:
        raise ValueError(f"patch has {rgb_patch.size} values, centroids have {centroids.shape[1]}")
    return int(((centroids - rgb_patch) ** 2).sum(axis=1).argmin())


def atom_budget(sizes, k_total: int) -> list[int]:
    """Split ``k_total`` atoms over clusters in proportion to their patch counts.

    Largest-remainder apportionment with a floor of one atom per cluster;
    the result always sums to ``k_total``.
    """
    sizes = np.asarray(sizes, dtype=float)
    C = sizes.size
    if k_total < C:
        raise ValueError(f"K_total={k_total} is smaller than the number of clusters {C}")
    quota = k_total * sizes / sizes.sum()
    k = np.maximum(1, np.floor(quota)).astype(int)
    deficit = k_total - int(k.sum())
    if deficit > 0:
        # stable sort keeps the lowest cluster id first among equal remainders
        order = np.argsort(-(quota - np.floor(quota)), kind="stable")
        k[order[:deficit]] += 1
    while k.sum() > k_total:
        over = np.where(k > 1, k - quota, -np.inf)
        k[int(np.argmax(over))] -= 1
    return k.tolist()
