import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import block
from damsph.errors import ConfigurationError, NumericalBlowupError
from damsph.neighbors import VerletList, brute_force, build_grid

RADIUS = 0.9  # 2h with h = 0.45


def naive_pairs(x, radius):
    """Double loop, written independently of the vectorized oracle."""
    out = set()
    for a in range(len(x)):
        for b in range(a + 1, len(x)):
            if np.hypot(*(x[a] - x[b])) < radius:
                out.add((a, b))
    return out


def test_pair_within_support():
    nl = build_grid([[0.0, 0.0], [0.5, 0.0]], RADIUS)
    assert nl.as_set() == {(0, 1)}
    assert nl.neighbors_of(0).tolist() == [1]
    assert nl.neighbors_of(1).tolist() == [0]


def test_pair_at_support_excluded():
    assert len(build_grid([[0.0, 0.0], [0.9, 0.0]], RADIUS)) == 0
    assert len(brute_force([[0.0, 0.0], [0.9, 0.0]], RADIUS)) == 0


def test_empty_and_single():
    assert len(brute_force(np.zeros((0, 2)), RADIUS)) == 0
    assert len(build_grid(np.zeros((0, 2)), RADIUS)) == 0
    assert len(build_grid([[1.0, 2.0]], RADIUS)) == 0


def test_equilateral_triangle():
    x = 0.5 * np.array([[0, 0], [1, 0], [0.5, np.sqrt(3) / 2]])
    assert brute_force(x, RADIUS).as_set() == {(0, 1), (0, 2), (1, 2)}


def test_interior_lattice_particle_has_eight_neighbors():
    p = block(5.0, 5.0, 0.5)
    nl = brute_force(p.position, RADIUS)
    counts = nl.counts()
    x, y = p.position.T
    interior = (x > 0.3) & (x < 4.7) & (y > 0.3) & (y < 4.7)
    assert np.all(counts[interior] == 8)
    dist = np.sort(np.linalg.norm(p.position[nl.neighbors_of(55)] - p.position[55], axis=1))
    assert np.allclose(dist, [0.5] * 4 + [0.5 * np.sqrt(2)] * 4)


def test_grid_matches_brute_force_500_particles():
    x = np.random.default_rng(11).uniform(0, 10, (500, 2))
    grid = build_grid(x, RADIUS)
    assert grid.as_set() == brute_force(x, RADIUS).as_set() == naive_pairs(x, RADIUS)
    assert np.array_equal(grid.pairs, brute_force(x, RADIUS).pairs)


@given(arrays(np.float64, st.tuples(st.integers(0, 80), st.just(2)),
              elements=st.floats(-5.0, 5.0)),
       st.floats(0.05, 3.0))
def test_grid_equals_brute_force_property(x, radius):
    grid = build_grid(x, radius)
    ref = brute_force(x, radius)
    assert np.array_equal(grid.pairs, ref.pairs)
    pairs = grid.pairs
    assert np.all(pairs[:, 0] < pairs[:, 1])
    d = np.linalg.norm(x[pairs[:, 0]] - x[pairs[:, 1]], axis=1)
    assert np.all(d < radius)


def test_larger_cell_size_still_exact():
    x = np.random.default_rng(5).uniform(0, 4, (200, 2))
    assert np.array_equal(build_grid(x, RADIUS, cell_size=2.5).pairs, brute_force(x, RADIUS).pairs)


def test_cell_smaller_than_radius_rejected():
    with pytest.raises(ConfigurationError):
        build_grid(np.zeros((3, 2)), RADIUS, cell_size=0.5)
    with pytest.raises(ConfigurationError):
        brute_force(np.zeros((3, 2)), 0.0)


def test_non_finite_positions_rejected():
    x = np.zeros((4, 2))
    x[2, 1] = np.nan
    with pytest.raises(NumericalBlowupError) as info:
        build_grid(x, RADIUS)
    assert info.value.particle == 2


def test_rebuild_after_zero_displacement_identical():
    x = np.random.default_rng(2).uniform(0, 6, (300, 2))
    a, b = build_grid(x, RADIUS), build_grid(x.copy(), RADIUS)
    assert a.pairs.tobytes() == b.pairs.tobytes()


def test_verlet_list_stays_exact():
    rng = np.random.default_rng(9)
    x = rng.uniform(0, 6, (300, 2))
    vl = VerletList(RADIUS, skin=0.2)
    for _ in range(30):
        assert np.array_equal(vl.update(x).pairs, brute_force(x, RADIUS).pairs)
        x = x + rng.normal(0, 0.02, x.shape)
    assert 1 < vl.rebuilds < 30
