import math

import numpy as np
import pytest

from _oracles import spectral_angle
from hsgp.coder import code_min_l1
from hsgp.synth import SynthSpec, generate, make_atoms, mean_abs_second_difference, random_response


def test_noiseless_single_atom_pixels_are_scaled_atoms():
    spec = SynthSpec(L=12, M=16, N=16, K_true=4, sparsity=1, noise_precision=math.inf, seed=3)
    scene = generate(spec)
    pixels = scene.cube.pixels()
    for i in range(0, pixels.shape[0], 7):
        k = int(np.flatnonzero(scene.codes[:, i])[0])
        assert spectral_angle(pixels[i], scene.atoms[:, k]) == pytest.approx(0.0, abs=1e-5)


def test_same_seed_same_scene():
    spec = SynthSpec(L=8, M=16, N=12, K_true=3, seed=7)
    a, b = generate(spec), generate(spec)
    assert np.array_equal(a.cube.data, b.cube.data)
    assert np.array_equal(a.atoms, b.atoms) and np.array_equal(a.codes, b.codes)


def test_scene_seed_changes_codes_not_atoms():
    a = generate(SynthSpec(L=8, M=16, N=16, seed=1, scene_seed=10))
    b = generate(SynthSpec(L=8, M=16, N=16, seed=1, scene_seed=11))
    assert np.array_equal(a.atoms, b.atoms)
    assert not np.array_equal(a.codes, b.codes)


def test_structure_of_generated_scene():
    spec = SynthSpec(L=10, M=24, N=16, K_true=5, sparsity=2, seed=2)
    scene = generate(spec)
    assert scene.cube.data.shape == (24, 16, 10)
    assert np.all(scene.cube.data >= 0)
    assert np.all(scene.atoms >= 0)
    np.testing.assert_allclose(np.linalg.norm(scene.atoms, axis=0), 1.0, rtol=1e-12)
    assert np.all((scene.codes > 0).sum(axis=0) == 2)
    np.testing.assert_array_equal(scene.cube.wavelengths, 400 + 10 * np.arange(10))


def test_true_dictionary_decodes_noiseless_pixels():
    spec = SynthSpec(L=31, M=32, N=32, K_true=8, sparsity=2, noise_precision=math.inf, seed=4)
    scene = generate(spec)
    pixels = scene.cube.pixels()
    hits = 0
    for i in range(pixels.shape[0]):
        code = code_min_l1(pixels[i], scene.atoms)
        hits += set(code.support().tolist()) == set(np.flatnonzero(scene.codes[:, i]).tolist())
    assert hits / pixels.shape[0] >= 0.99


def test_atoms_are_smooth():
    # a single bump of width w has mean |second difference| of order 1/(w^2 sqrt(L w)); with
    # w >= 3 on 31 channels that is far below the 0.05 bound, while white noise of the
    # same norm sits near 4/sqrt(L) ~ 0.3
    atoms = make_atoms(31, 50, (3.0, 6.0), np.random.default_rng(0))
    assert mean_abs_second_difference(atoms) < 0.05
    noise = np.abs(np.random.default_rng(1).standard_normal((31, 50)))
    noise /= np.linalg.norm(noise, axis=0)
    assert mean_abs_second_difference(noise) > 0.05


def test_random_response_rows():
    T = random_response(31, seed=5).matrix
    assert T.shape == (3, 31) and np.all(T >= 0)
    np.testing.assert_allclose(T.sum(axis=1), 1.0, rtol=1e-12)
    assert np.linalg.matrix_rank(T) == 3


@pytest.mark.parametrize("kwargs", [dict(K_true=0), dict(K_true=2, sparsity=3),
                                    dict(noise_precision=0.0), dict(smoothness=(4.0, 2.0)),
                                    dict(M=0)])
def test_invalid_specs(kwargs):
    with pytest.raises(ValueError):
        SynthSpec(**kwargs)
