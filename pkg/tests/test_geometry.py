import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from cellfree.errors import EmptyInputError
from cellfree.geometry import (CELLFREE, COLOCATED, Topology, colocated_topology,
                               pairwise_distances, random_topology, read_topology_csv,
                               sample_disk_points, write_topology_csv)


def test_single_point_in_disk(rng):
    p = sample_disk_points(1, rng)
    assert p.shape == (1, 2)
    assert np.hypot(*p[0]) <= 1.0


def test_empty_request_rejected(rng):
    with pytest.raises(EmptyInputError):
        sample_disk_points(0, rng)


def test_radial_law_ks(rng):
    r = np.hypot(*sample_disk_points(100_000, rng).T)
    assert stats.kstest(r, lambda x: np.clip(x, 0, 1) ** 2).pvalue > 0.01


def test_mean_square_radius(rng):
    r2 = np.sum(sample_disk_points(100_000, rng) ** 2, axis=1)
    assert abs(r2.mean() - 0.5) < 3 * r2.std(ddof=1) / np.sqrt(r2.size)


def test_polar_grid_uniformity(rng):
    # 8 equal-area rings x 8 sectors
    p = sample_disk_points(100_000, rng)
    ring = np.minimum((np.sum(p ** 2, axis=1) * 8).astype(int), 7)
    sector = np.minimum(((np.arctan2(p[:, 1], p[:, 0]) + np.pi) / (2 * np.pi) * 8).astype(int), 7)
    counts = np.bincount(ring * 8 + sector, minlength=64)
    assert stats.chisquare(counts).pvalue > 0.01


def test_three_four_five():
    topo = Topology([[0.0, 0.0]], [[0.3, 0.4]])
    assert pairwise_distances(topo)[0, 0] == pytest.approx(0.5, abs=1e-15)


def test_colocated_columns_equal_user_radius(rng):
    users = sample_disk_points(4, rng)
    d = pairwise_distances(colocated_topology(5, users))
    np.testing.assert_allclose(d, np.tile(np.hypot(*users.T), (5, 1)), rtol=0, atol=0)


def test_colocated_small_cases():
    d = pairwise_distances(colocated_topology(3, [[1.0, 0.0]]))
    assert d.shape == (3, 1) and np.all(d == 1.0)
    assert pairwise_distances(colocated_topology(1, [[0.0, 0.0]]))[0, 0] == 0.0


def test_colocated_gains_constant_per_user(rng):
    topo = random_topology(300, 10, rng, COLOCATED)
    gamma = pairwise_distances(topo) ** -4.0
    assert np.all(gamma == gamma[0])


def test_distances_deterministic_and_bounded():
    topo = random_topology(40, 6, np.random.default_rng(3))
    d1, d2 = pairwise_distances(topo), pairwise_distances(topo)
    assert np.array_equal(d1, d2)
    assert d1.min() >= 0 and d1.max() <= 2


def test_seed_determinism():
    a = random_topology(30, 5, np.random.default_rng(9))
    b = random_topology(30, 5, np.random.default_rng(9))
    assert np.array_equal(a.antenna_positions, b.antenna_positions)
    assert np.array_equal(a.user_positions, b.user_positions)


def test_user_layout_independent_of_L():
    a = random_topology(30, 5, np.random.default_rng(9))
    b = random_topology(300, 5, np.random.default_rng(9), COLOCATED)
    assert np.array_equal(a.user_positions, b.user_positions)


def test_validation():
    with pytest.raises(ValueError):
        Topology([[1.5, 0.0]], [[0.0, 0.0]])
    with pytest.raises(ValueError):
        Topology([[0.1, 0.0]], [[0.0, 0.0]], COLOCATED)
    with pytest.raises(EmptyInputError):
        Topology(np.empty((0, 2)), [[0.0, 0.0]])


def test_positions_read_only(rng):
    topo = random_topology(4, 2, rng)
    with pytest.raises(ValueError):
        topo.antenna_positions[0, 0] = 0.0


def test_duplicate_positions_kept():
    topo = Topology([[0.1, 0.1], [0.1, 0.1]], [[0.1, 0.1]])
    assert topo.L == 2
    assert np.all(pairwise_distances(topo) == 0.0)


@pytest.mark.parametrize("mode", [CELLFREE, COLOCATED])
def test_csv_round_trip(tmp_path, mode):
    topo = random_topology(7, 3, np.random.default_rng(1), mode)
    write_topology_csv(topo, tmp_path / "t.csv")
    back = read_topology_csv(tmp_path / "t.csv")
    assert back.mode == mode
    assert np.array_equal(back.antenna_positions, topo.antenna_positions)
    assert np.array_equal(back.user_positions, topo.user_positions)


@given(st.integers(1, 50), st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_distance_bounds_property(L, K, seed):
    d = pairwise_distances(random_topology(L, K, np.random.default_rng(seed)))
    assert d.shape == (L, K)
    assert np.all((d >= 0) & (d <= 2))
