import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsgp.core import HyperCube, SpectralTransform
from hsgp.preprocess import (Clustering, PatchSet, assign_cluster, atom_budget, extract_patches,
                             grid_origins, kmeans, rgb_centroids, subsample_pixels)


def _cube(rows, cols, bands, seed=0):
    rng = np.random.default_rng(seed)
    return HyperCube(rng.random((rows, cols, bands)), np.arange(float(bands)))


def _origins_by_rule(extent, p, stride):
    return [r for r in range(extent) if r % stride == 0 and r + p <= extent]


def test_disjoint_grid_16x16():
    ps = extract_patches(_cube(16, 16, 2), 8, 8)
    assert [p.origin for p in ps.patches] == [(0, 0), (0, 8), (8, 0), (8, 8)]


@pytest.mark.parametrize("size,count", [(9, 1), (10, 4)])
def test_stride_two_grid(size, count):
    ps = extract_patches(_cube(size, size, 2), 8, 2)
    rule = _origins_by_rule(size, 8, 2)
    assert len(ps) == count == len(rule) ** 2
    assert [p.origin for p in ps.patches] == [(r, c) for r in rule for c in rule]


@settings(max_examples=100, deadline=None)
@given(extent=st.integers(1, 40), p=st.integers(1, 12), stride=st.integers(1, 9))
def test_grid_origins_follow_rule(extent, p, stride):
    assert grid_origins(extent, p, stride) == _origins_by_rule(extent, p, stride)


def test_patch_vector_is_pixel_major():
    cube = _cube(4, 4, 3)
    patch = extract_patches(cube, 2, 2).patches[3]
    assert patch.origin == (2, 2)
    np.testing.assert_array_equal(patch.vector, cube.data[2:4, 2:4, :].ravel())


def test_patch_larger_than_image():
    with pytest.raises(ValueError):
        extract_patches(_cube(4, 4, 1), 5, 1)


def test_disjoint_patches_cover_pixels_once():
    cube = _cube(19, 13, 1)
    seen = np.zeros((19, 13), dtype=int)
    for patch in extract_patches(cube, 4, 4).patches:
        r, c = patch.origin
        seen[r:r + 4, c:c + 4] += 1
    assert seen.max() == 1
    assert seen[:16, :12].min() == 1


def test_kmeans_separates_point_clouds():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((30, 5)) * 0.1
    b = rng.standard_normal((20, 5)) * 0.1 + 100.0
    x = np.vstack([a, b])
    cl = kmeans(x, 2, seed=3)
    assert len(set(cl.assignment[:30])) == 1
    assert len(set(cl.assignment[30:])) == 1
    assert cl.assignment[0] != cl.assignment[30]


def test_kmeans_single_cluster_is_mean():
    rng = np.random.default_rng(2)
    x = rng.random((17, 4))
    cl = kmeans(x, 1, seed=0)
    np.testing.assert_allclose(cl.centroids[0], x.mean(axis=0), rtol=1e-13)


def test_kmeans_beats_random_assignment():
    rng = np.random.default_rng(3)
    x = np.vstack([rng.standard_normal((40, 6)) + shift for shift in (0.0, 3.0, 6.0)])
    cl = kmeans(x, 3, seed=7)

    def objective(assign):
        return sum(((x[assign == c] - x[assign == c].mean(axis=0)) ** 2).sum()
                   for c in np.unique(assign))

    random_assign = rng.integers(0, 3, size=x.shape[0])
    assert objective(cl.assignment) <= objective(random_assign)


def test_kmeans_objective_non_increasing_and_deterministic():
    rng = np.random.default_rng(4)
    x = rng.random((80, 3))
    a = kmeans(x, 5, seed=11)
    b = kmeans(x, 5, seed=11)
    assert all(t1 <= t0 * (1 + 1e-12) for t0, t1 in zip(a.objective_trace, a.objective_trace[1:]))
    np.testing.assert_array_equal(a.assignment, b.assignment)
    np.testing.assert_array_equal(a.centroids, b.centroids)


def test_kmeans_no_empty_clusters_with_duplicates():
    x = np.vstack([np.zeros((10, 2)), np.ones((2, 2))])
    cl = kmeans(x, 4, seed=0)
    assert cl.sizes().min() >= 1


def test_kmeans_restarts_never_worse():
    rng = np.random.default_rng(5)
    x = rng.random((60, 4))

    def final(cl):
        return float(((x - cl.centroids[cl.assignment]) ** 2).sum())

    assert final(kmeans(x, 4, seed=1, n_init=8)) <= final(kmeans(x, 4, seed=1, n_init=1)) + 1e-12


def test_kmeans_rejects_too_many_clusters():
    with pytest.raises(ValueError):
        kmeans(np.zeros((3, 2)), 4)


def test_kmeans_centered_ignores_offsets():
    base = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0]])
    x = np.vstack([base[i % 2] + 10.0 * (i // 2) for i in range(10)])
    cl = kmeans(x, 2, seed=0, center=True)
    assert len(set(cl.assignment[0::2])) == 1 and len(set(cl.assignment[1::2])) == 1


def test_subsample_all_pixels():
    ps = extract_patches(_cube(8, 16, 3), 8, 8)
    Y = subsample_pixels(ps.patches, 1.0, seed=0)
    assert Y.shape == (3, 128)
    np.testing.assert_array_equal(Y[:, :64].T, ps.patches[0].pixels())


def test_subsample_one_percent_takes_one_pixel_per_patch():
    ps = extract_patches(_cube(16, 16, 2), 8, 8)
    Y = subsample_pixels(ps.patches, 0.01, seed=0)
    assert Y.shape == (2, 4) and math.ceil(0.01 * 64) == 1
    for j, patch in enumerate(ps.patches):
        assert any(np.array_equal(Y[:, j], px) for px in patch.pixels())


def test_subsample_is_seeded():
    ps = extract_patches(_cube(16, 16, 2), 8, 8)
    a = subsample_pixels(ps.patches, 0.2, seed=5)
    b = subsample_pixels(ps.patches, 0.2, seed=5)
    np.testing.assert_array_equal(a, b)
    assert a.shape[1] == 4 * math.ceil(0.2 * 64)
    with pytest.raises(ValueError):
        subsample_pixels(ps.patches, 0.0)


def test_rgb_centroids_identity_equals_hs_centroids():
    ps = extract_patches(_cube(16, 16, 3), 4, 4)
    cl = kmeans(ps, 3, seed=0)
    rc = rgb_centroids(cl, ps, SpectralTransform(np.eye(3)))
    np.testing.assert_allclose(rc, cl.centroids, rtol=1e-13)


def test_rgb_centroids_two_pass_oracle():
    rng = np.random.default_rng(9)
    ps = extract_patches(_cube(12, 12, 5, seed=9), 3, 3)
    T = rng.random((3, 5))
    assign = np.arange(len(ps)) % 4
    assign[-1] = 3
    cl = Clustering(assign, np.zeros((4, 45)), ())
    rc = rgb_centroids(cl, ps, SpectralTransform(T))
    for c in range(4):
        members = [ps.patches[i] for i in range(len(ps)) if assign[i] == c]
        total = np.zeros(27)
        for patch in members:
            px = patch.vector.reshape(9, 5)
            total += np.concatenate([[T[ch] @ px[n] for ch in range(3)] for n in range(9)])
        np.testing.assert_allclose(rc[c], total / len(members), rtol=1e-12)


def test_rgb_centroid_of_single_patch_cluster():
    ps = extract_patches(_cube(8, 4, 5), 4, 4)
    T = np.random.default_rng(0).random((3, 5))
    cl = Clustering(np.array([0, 1]), np.zeros((2, 80)), ())
    rc = rgb_centroids(cl, ps, SpectralTransform(T))
    np.testing.assert_allclose(rc[1], (ps.patches[1].pixels() @ T.T).ravel(), rtol=1e-13)


def test_assign_cluster_examples():
    cents = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [5.0, 5.0]])
    assert assign_cluster(np.array([5.0, 5.0]), cents) == 3
    # equidistant to centroids 1 and 2: lowest id wins
    assert assign_cluster(np.array([0.0, 7.0]), cents[1:3]) == 0
    cents2 = np.array([[9.0, 9.0], [1.0, 0.0], [-1.0, 0.0]])
    assert assign_cluster(np.array([0.0, 0.5]), cents2) == 1


def test_assign_cluster_matches_scan():
    rng = np.random.default_rng(6)
    for _ in range(100):
        cents = rng.random((7, 12))
        x = rng.random(12)
        best, best_d = 0, math.inf
        for c in range(7):
            d = math.sqrt(sum((x[j] - cents[c, j]) ** 2 for j in range(12)))
            if d < best_d:
                best, best_d = c, d
        assert assign_cluster(x, cents) == best


@settings(max_examples=200, deadline=None)
@given(sizes=st.lists(st.integers(1, 500), min_size=1, max_size=12), extra=st.integers(0, 2000))
def test_atom_budget_sums_and_floors(sizes, extra):
    k_total = len(sizes) + extra
    budget = atom_budget(sizes, k_total)
    assert sum(budget) == k_total
    assert min(budget) >= 1


def test_atom_budget_proportional():
    assert atom_budget([50, 30, 20], 10) == [5, 3, 2]
    assert sum(atom_budget([1, 1, 1], 10)) == 10
    assert atom_budget([98, 1, 1], 10) == [8, 1, 1]


def test_patchset_requires_uniform_patches():
    a = extract_patches(_cube(4, 4, 2), 2, 2)
    b = extract_patches(_cube(4, 4, 3), 2, 2)
    with pytest.raises(ValueError):
        PatchSet.concat([a, b])
