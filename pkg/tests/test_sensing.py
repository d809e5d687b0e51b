import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csi_codelearn.data import SpectralCube, flatten
from csi_codelearn.sensing import (
    BINARY,
    CONTINUOUS,
    CodingPatternSet,
    band_partition,
    banded_design,
    identity_design,
    load_patterns,
    pattern_image,
    random_design,
    save_patterns,
    sense,
    sensing_ratio,
    shots_for_ratio,
    simulate_snapshots,
    snapshot_assignment,
)

from conftest import random_cube


def brute_force_measurements(H, cube):
    """Per-pixel, per-pattern sums written out longhand."""
    M, N, L = cube.shape
    Y = np.zeros((H.shape[0], M * N))
    for s in range(H.shape[0]):
        for m in range(M):
            for n in range(N):
                Y[s, m * N + n] = sum(H[s, l] * cube.voxels[m, n, l] for l in range(L))
    return Y


def test_sense_identity_returns_F(rng):
    F = rng.random((6, 11))
    assert np.array_equal(sense(identity_design(6), F), F)


def test_sense_single_row_sum():
    H = CodingPatternSet([[1, 0, 1]])
    assert sense(H, np.array([[2.0], [3.0], [4.0]]))[0, 0] == 6.0


def test_sense_all_ones_is_band_sum(rng):
    F = rng.random((5, 7))
    Y = sense(CodingPatternSet(np.ones((1, 5))), F)
    np.testing.assert_allclose(Y[0], F.sum(axis=0), rtol=1e-15)


def test_sense_band_mismatch(rng):
    with pytest.raises(ValueError):
        sense(identity_design(4), rng.random((5, 3)))


def test_sense_matches_longhand(rng):
    cube = random_cube(rng, 3, 4, 6)
    H = random_design(3, 6, seed=2)
    np.testing.assert_allclose(sense(H, flatten(cube)), brute_force_measurements(H.entries, cube),
                               rtol=1e-14)


def test_sense_noise_hook_off_by_default(rng):
    F = rng.random((4, 9))
    H = random_design(2, 4, seed=0)
    assert np.array_equal(sense(H, F), sense(H, F))
    noisy = sense(H, F, noise_std=0.1, rng=np.random.default_rng(0))
    assert not np.array_equal(noisy, sense(H, F))


@settings(max_examples=30)
@given(st.integers(0, 2**31), st.floats(-3, 3), st.floats(-3, 3))
def test_sense_is_linear(seed, a, b):
    r = np.random.default_rng(seed)
    H = random_design(4, 12, seed=seed)
    F1, F2 = r.random((12, 9)), r.random((12, 9))
    lhs = sense(H, a * F1 + b * F2)
    rhs = a * sense(H, F1) + b * sense(H, F2)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-6, atol=1e-6 * (abs(a) + abs(b) + 1) * 12)


def test_snapshots_equal_matrix_form(rng):
    cube = random_cube(rng)
    for seed in range(20):
        H = random_design(int(rng.integers(1, 17)), 16, seed=seed)
        assert np.array_equal(simulate_snapshots(H, cube), sense(H, flatten(cube)))


def test_snapshots_single_shot(rng):
    cube = random_cube(rng, 4, 4, 8)
    H = random_design(1, 8, seed=4)
    Y = simulate_snapshots(H, cube)
    assert Y.shape == (1, 16)
    np.testing.assert_allclose(Y[0], flatten(cube).T @ H.entries[0], rtol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 8), st.integers(0, 7))
def test_snapshots_independent_of_assignment(seed, S, offset):
    r = np.random.default_rng(seed)
    cube = SpectralCube(r.random((5, 4, 8)))
    H = random_design(S, 8, seed=seed)
    base = simulate_snapshots(H, cube)
    rotated = simulate_snapshots(H, cube, snapshot_assignment(S, 5, 4, offset))
    # arbitrary per-pixel permutation of the shot order
    perm = np.stack([r.permutation(S) for _ in range(20)], axis=1).reshape(S, 5, 4)
    shuffled = simulate_snapshots(H, cube, perm)
    assert np.array_equal(base, rotated) and np.array_equal(base, shuffled)


def test_snapshot_assignment_covers_every_pattern():
    a = snapshot_assignment(5, 4, 6)
    assert np.all(np.sort(a, axis=0) == np.arange(5)[:, None, None])
    # neighbours differ within a shot
    assert np.all(a[:, :, 1:] != a[:, :, :-1])


def test_snapshots_reject_continuous(rng):
    with pytest.raises(ValueError):
        simulate_snapshots(CodingPatternSet(np.full((2, 16), 0.5), CONTINUOUS), random_cube(rng))


def test_snapshots_reject_bad_assignment(rng):
    H = random_design(3, 16, seed=0)
    bad = np.zeros((3, 8, 8), dtype=int)
    with pytest.raises(ValueError):
        simulate_snapshots(H, random_cube(rng), bad)


def test_sensing_ratio_values():
    assert sensing_ratio(10, 101) == pytest.approx(0.0990099, abs=1e-7)
    assert sensing_ratio(96, 96) == 1.0
    assert sensing_ratio(48, 96) == 0.5
    with pytest.raises(ValueError):
        sensing_ratio(11, 10)


def test_shots_for_ratio():
    assert shots_for_ratio(0.1, 101) == 10
    assert shots_for_ratio(1.0, 96) == 96
    assert shots_for_ratio(0.005, 96) == 1
    # every ratio of the published sweep, both datasets
    assert [shots_for_ratio(r, 101) for r in (0.1, 0.2, 0.3, 0.4, 0.5)] == [10, 20, 30, 40, 51]
    assert [shots_for_ratio(r, 96) for r in (0.1, 0.2, 0.3, 0.4, 0.5)] == [10, 19, 29, 38, 48]


def test_random_design_density_regression():
    H = random_design(10, 100, 0.5, seed=0)
    assert H.is_binary
    assert H.entries.mean() == pytest.approx(0.473)
    assert 0.4 <= random_design(10, 100, 0.5, seed=7).entries.mean() <= 0.6


def test_random_design_deterministic():
    assert np.array_equal(random_design(5, 20, seed=3).entries, random_design(5, 20, seed=3).entries)


def test_random_design_sparse_rows_not_empty():
    for seed in range(20):
        H = random_design(3, 3, density=0.01, seed=seed)
        assert np.all(H.entries.sum(axis=1) >= 1)


def test_banded_small():
    np.testing.assert_array_equal(banded_design(2, 4).entries, [[1, 1, 0, 0], [0, 0, 1, 1]])
    np.testing.assert_array_equal(banded_design(5, 5).entries, np.eye(5))


def test_band_partition_enumerated():
    assert band_partition(3, 8).tolist() == [3, 3, 2]
    for L in range(1, 30):
        for S in range(1, L + 1):
            lengths = band_partition(S, L)
            assert lengths.sum() == L and lengths.max() - lengths.min() <= 1
            assert np.all(np.diff(lengths) <= 0)


@given(st.integers(1, 40).flatmap(lambda L: st.tuples(st.integers(1, L), st.just(L))))
def test_banded_rows_orthogonal_and_cover(SL):
    S, L = SL
    H = banded_design(S, L).entries
    G = H @ H.T
    assert np.array_equal(G, np.diag(np.diag(G)))
    assert np.array_equal(H.sum(axis=0), np.ones(L))


def test_identity_design():
    H = identity_design(3)
    assert H.is_binary and np.array_equal(H.entries, np.eye(3))
    assert sensing_ratio(H.S, H.L) == 1.0


def test_pattern_set_invariants():
    with pytest.raises(ValueError):
        CodingPatternSet([[0, 0.5]], BINARY)
    with pytest.raises(ValueError):
        CodingPatternSet([[0, 0], [1, 0]], BINARY)
    with pytest.raises(ValueError):
        CodingPatternSet(np.ones((3, 2)), BINARY)


def test_pattern_file_roundtrip(tmp_path, rng):
    H = random_design(4, 9, seed=1)
    save_patterns(tmp_path / "h.pat", H)
    text = (tmp_path / "h.pat").read_text().splitlines()
    assert text[0] == "PAT1 4 9 binary"
    assert set(" ".join(text[1:]).split()) <= {"0", "1"}
    back = load_patterns(tmp_path / "h.pat")
    assert back.mode == BINARY and np.array_equal(back.entries, H.entries)

    P = CodingPatternSet(rng.normal(size=(2, 5)), CONTINUOUS)
    save_patterns(tmp_path / "p.pat", P)
    back = load_patterns(tmp_path / "p.pat")
    assert back.mode == CONTINUOUS and np.array_equal(back.entries, P.entries)


def test_pattern_file_body_mismatch(tmp_path):
    (tmp_path / "x.pat").write_text("PAT1 2 3 binary\n1 0 1\n")
    with pytest.raises(ValueError):
        load_patterns(tmp_path / "x.pat")


def test_pattern_image_layout():
    img = pattern_image(banded_design(2, 4), cell=2)
    assert img.shape == (4, 8) and img.dtype == np.uint8
    assert img[0, 0] == 255 and img[0, 7] == 0
