import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csi_codelearn import data
from csi_codelearn.data import (
    CubeFormatError,
    LabelMap,
    SpectralCube,
    flatten,
    load_cube,
    load_labels,
    save_cube,
    save_labels,
    split,
    synth_dataset,
    unflatten,
)

from conftest import blocky_labels, random_cube


def write_raw_cube(path, header, values):
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.asarray(values, dtype="<f4").tobytes())


def test_load_cube_reads_dimensions(tmp_path, rng):
    p = tmp_path / "a.cube"
    write_raw_cube(p, "CUBE1 8 8 16\n", rng.random(1024))
    cube = load_cube(p, "CUBE1")
    assert (cube.M, cube.N, cube.L) == (8, 8, 16)


def test_load_cube_size_mismatch(tmp_path, rng):
    p = tmp_path / "short.cube"
    write_raw_cube(p, "CUBE1 8 8 16\n", rng.random(1000))
    with pytest.raises(CubeFormatError, match="1024"):
        load_cube(p)


def test_load_cube_rejects_nan_with_index(tmp_path, rng):
    v = rng.random(1024)
    v[5 * 16 + 3] = np.nan   # pixel (0, 5), band 3
    p = tmp_path / "nan.cube"
    write_raw_cube(p, "CUBE1 8 8 16\n", v)
    with pytest.raises(CubeFormatError, match=r"\(0, 5, 3\)"):
        load_cube(p)


def test_load_cube_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_cube(tmp_path / "nope.cube")


def test_load_cube_bad_header(tmp_path):
    p = tmp_path / "bad.cube"
    write_raw_cube(p, "CUBE2 1 1 1\n", [0.0])
    with pytest.raises(CubeFormatError):
        load_cube(p)


def test_cube_roundtrip_and_normalization(tmp_path, rng):
    raw = rng.random((3, 4, 5)) * 7 - 2
    cube = SpectralCube(data.normalize(raw))
    p = tmp_path / "c.cube"
    save_cube(p, cube)
    back = load_cube(p)
    assert back.voxels.min() == 0.0 and back.voxels.max() == 1.0
    np.testing.assert_allclose(back.voxels, cube.voxels, atol=1e-6)


def test_label_roundtrip(tmp_path):
    lab = blocky_labels([3, 4, 5])
    p = tmp_path / "l.lbl"
    save_labels(p, lab)
    back = load_labels(p)
    assert back.n_classes == 3
    np.testing.assert_array_equal(back.labels, lab.labels)


def test_label_size_mismatch(tmp_path):
    p = tmp_path / "l.lbl"
    with open(p, "wb") as fh:
        fh.write(b"LBL1 2 2 2\n" + np.zeros(3, "<i2").tobytes())
    with pytest.raises(CubeFormatError):
        load_labels(p)


def test_normalize_maps_min_max():
    v = np.array([[[2.0, 4.0], [6.0, 10.0]]])
    out = data.normalize(v)
    assert out.min() == 0.0 and out.max() == 1.0
    np.testing.assert_allclose(out.ravel(), [0, 0.25, 0.5, 1.0])


def test_flatten_small_example():
    cube = SpectralCube(np.array([[[1, 2, 3], [4, 5, 6]]], dtype=float))
    np.testing.assert_array_equal(flatten(cube), [[1, 4], [2, 5], [3, 6]])


def test_flatten_single_pixel():
    sig = np.arange(7.0)
    F = flatten(SpectralCube(sig.reshape(1, 1, 7)))
    assert F.shape == (7, 1)
    np.testing.assert_array_equal(F[:, 0], sig)


def test_flatten_row_major_pixel_order(rng):
    cube = random_cube(rng, 3, 5, 4)
    F = flatten(cube)
    for j in range(15):
        np.testing.assert_array_equal(F[:, j], cube.voxels[j // 5, j % 5])


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 9), st.integers(0, 2**31))
def test_flatten_unflatten_bijection(M, N, L, seed):
    cube = SpectralCube(np.random.default_rng(seed).random((M, N, L)))
    back = unflatten(flatten(cube), M, N)
    assert np.array_equal(back.voxels, cube.voxels)


def test_split_ten_percent_per_class():
    lab = blocky_labels([100, 100, 100])
    sp = split(lab, 0.1, seed=3)
    assert np.array_equal(np.bincount(lab.flat[sp.train]), [10, 10, 10])


def test_split_deterministic():
    lab = blocky_labels([100, 57, 80])
    a, b = split(lab, 0.1, 9), split(lab, 0.1, 9)
    assert np.array_equal(a.train, b.train) and np.array_equal(a.test, b.test)


def test_split_tiny_class_errors():
    lab = blocky_labels([100, 5, 100])
    with pytest.raises(ValueError, match="class 1"):
        split(lab, 0.1, 0)


def test_split_empty_class_errors():
    lab = LabelMap(np.array([[0, 0, -1], [2, 2, 2]]), 3)
    with pytest.raises(ValueError, match="class 1"):
        split(lab, 0.5, 0)


@settings(max_examples=40)
@given(st.lists(st.integers(10, 200), min_size=2, max_size=5),
       st.floats(0.1, 0.9), st.integers(0, 1000))
def test_split_is_stratified_partition(counts, fraction, seed):
    lab = blocky_labels(counts)
    sp = split(lab, fraction, seed)
    labeled = np.flatnonzero(lab.flat >= 0)
    assert np.intersect1d(sp.train, sp.test).size == 0
    assert np.array_equal(np.union1d(sp.train, sp.test), labeled)
    per_class = np.bincount(lab.flat[sp.train], minlength=len(counts))
    assert np.all(np.abs(per_class - fraction * np.array(counts)) <= 1)


def test_synth_zero_noise_classes_are_constant():
    cube, lab = synth_dataset(32, 32, 24, 3, 0.0, seed=5)
    F = flatten(cube)
    for c in range(3):
        sig = F[:, lab.flat == c]
        assert sig.shape[1] > 0
        # identical columns: within-class variance is exactly zero
        assert np.all(sig == sig[:, :1])


def test_synth_deterministic():
    a = synth_dataset(16, 16, 12, 2, 0.05, seed=11)
    b = synth_dataset(16, 16, 12, 2, 0.05, seed=11)
    assert np.array_equal(a[0].voxels, b[0].voxels)
    assert np.array_equal(a[1].labels, b[1].labels)


def test_synth_layout_has_border_and_all_classes():
    cube, lab = synth_dataset(64, 64, 96, 3, 0.05, seed=0)
    assert cube.shape == (64, 64, 96) and lab.shape == (64, 64)
    assert np.all(lab.labels[:2] == -1) and np.all(lab.labels[:, -2:] == -1)
    assert np.all(lab.class_counts() > 0)
    assert cube.voxels.min() == 0.0 and cube.voxels.max() == 1.0


def test_synth_template_separation_above_noise():
    # Templates differ through one narrow feature each; check the pairwise
    # separation measured in units of the per-band noise std is large enough
    # that the full-data Bayes pairwise error is tiny (d/2 > 3).
    noise = 0.05
    rng = np.random.default_rng(0)
    t = data.class_templates(96, 3, rng)
    for a in range(3):
        for b in range(a + 1, 3):
            d = np.linalg.norm(t[a] - t[b]) / noise
            assert d > 6.0, (a, b, d)


def test_synth_preconditions():
    with pytest.raises(ValueError):
        synth_dataset(16, 16, 12, 1, 0.0, 0)
    with pytest.raises(ValueError):
        synth_dataset(16, 16, 4, 2, 0.0, 0)


def test_cube_rejects_non_finite():
    v = np.zeros((2, 2, 2))
    v[1, 0, 1] = np.inf
    with pytest.raises(ValueError, match=r"\(1, 0, 1\)"):
        SpectralCube(v)
