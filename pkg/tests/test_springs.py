import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import block, concrete, make_solver
from damsph.errors import ConfigurationError, NumericalBlowupError
from damsph.lattice import merge
from damsph.neighbors import build_grid
from damsph.springs import (CHARACTERISTIC_LENGTH, bond_strain, init_network, interaction_factor,
                            update_bonds)

RADIUS = 0.9


def network_for(positions, materials=None, index=None, **kw):
    x = np.asarray(positions, dtype=float)
    materials = materials or [concrete()]
    index = np.zeros(len(x), dtype=int) if index is None else index
    return init_network(x, build_grid(x, RADIUS), materials, index, **kw)


def pair(length=0.5):
    return np.array([[0.0, 0.0], [length, 0.0]])


class TestInit:
    def test_interior_particle_has_eight_bonds(self):
        p = block(5.0, 5.0)
        nw = network_for(p.position)
        x, y = p.position.T
        interior = (x > 0.3) & (x < 4.7) & (y > 0.3) & (y < 4.7)
        assert np.all(nw.degree[interior] == 8)
        assert np.all(nw.f == 1.0) and np.all(nw.kappa == 0.0)

    def test_isolated_particle_has_no_bonds(self):
        x = np.array([[0.0, 0.0], [0.5, 0.0], [10.0, 10.0]])
        nw = network_for(x)
        assert len(nw) == 1
        assert nw.degree.tolist() == [1, 1, 0]
        assert nw.connectivity_damage()[2] == 0.0

    def test_two_particles(self):
        nw = network_for(pair())
        assert len(nw) == 1
        assert nw.rest_length[0] == 0.5
        assert (nw.i[0], nw.j[0]) == (0, 1)

    def test_interface_bonds_use_weaker_material(self):
        dam = block(2.0, 2.0, material=concrete(name="dam"), label="dam")
        rock = block(2.0, 2.0, material=concrete(name="rock", f_t=30e6, eps0=1e-3, G_f=1000.0,
                                                 E=30e9),
                     origin=(0.0, -2.0), label="foundation")
        p = merge([dam, rock])
        nw = network_for(p.position, p.materials, p.material)
        mi, mj = p.material[nw.i], p.material[nw.j]
        cross = mi != mj
        assert cross.any()
        assert np.all(nw.params.eps0[cross] == 1e-4)
        assert np.all(nw.params.G_f[cross] == 100.0)
        both_rock = (mi == 1) & (mj == 1)
        assert np.all(nw.params.eps0[both_rock] == 1e-3)


class TestUpdate:
    def test_stretch_to_initiation_keeps_factor(self):
        nw = network_for(pair())
        update_bonds(nw, pair(0.50005))
        assert nw.kappa[0] == pytest.approx(1e-4, rel=1e-9)
        assert nw.f[0] == pytest.approx(1.0, abs=1e-9)

    def test_compression_leaves_history(self):
        nw = network_for(pair())
        update_bonds(nw, pair(0.4))
        assert nw.kappa[0] == 0.0 and nw.f[0] == 1.0

    def test_damaged_factor(self):
        nw = network_for(pair(), length_scale=CHARACTERISTIC_LENGTH)
        update_bonds(nw, pair(0.5001))
        expected = 0.5 * np.exp(-15515.0 * 1e-4)
        assert nw.f[0] == pytest.approx(expected, rel=1e-9)
        assert nw.f[0] == pytest.approx(0.1060, abs=1e-4)

    def test_rest_length_scale_is_default(self):
        # with rest length 0.5 m both readings coincide
        a = network_for(pair())
        b = network_for(pair(), length_scale=CHARACTERISTIC_LENGTH)
        update_bonds(a, pair(0.5001))
        update_bonds(b, pair(0.5001))
        assert a.f[0] == pytest.approx(b.f[0], rel=1e-12)
        with pytest.raises(ConfigurationError):
            network_for(pair(), length_scale="h").characteristic_length()

    def test_failure_is_permanent(self):
        nw = network_for(pair())
        update_bonds(nw, pair(0.6))
        assert nw.failed[0] and nw.f[0] == 0.0
        for length in (0.5, 0.45, 0.5):
            update_bonds(nw, pair(length))
            assert interaction_factor(nw, 0, 1) == 0.0

    def test_frozen_update_keeps_history(self):
        nw = network_for(pair())
        update_bonds(nw, pair(0.6), frozen=True)
        assert nw.f[0] == 1.0 and nw.kappa[0] == 0.0

    def test_non_finite_positions(self):
        nw = network_for(pair())
        with pytest.raises(NumericalBlowupError):
            update_bonds(nw, np.array([[0.0, 0.0], [np.nan, 0.0]]))

    def test_bond_strain(self):
        nw = network_for(pair())
        assert bond_strain(nw, pair(0.55))[0] == pytest.approx(0.1)


class TestInteractionFactor:
    def test_bonded_and_unbonded(self):
        x = np.array([[0.0, 0.0], [0.5, 0.0], [1.2, 0.0]])
        nw = network_for(x)
        assert interaction_factor(nw, 0, 1) == 1.0
        assert interaction_factor(nw, 0, 2) == 0.0
        assert interaction_factor(nw, 1, 1) == 0.0

    def test_symmetric_access(self):
        p = block(3.0, 3.0)
        nw = network_for(p.position)
        rng = np.random.default_rng(0)
        x = p.position + rng.normal(0, 2e-4, p.position.shape)
        update_bonds(nw, x)
        for a, b in zip(nw.i, nw.j):
            assert nw.interaction_factor(a, b) == nw.interaction_factor(b, a)


@given(st.lists(st.floats(0.3, 0.8), min_size=1, max_size=40))
def test_irreversibility(lengths):
    nw = network_for(pair())
    last = 1.0
    for length in lengths:
        update_bonds(nw, pair(length))
        assert nw.f[0] <= last
        last = nw.f[0]


def test_connectivity_damage_range():
    p = block(3.0, 3.0)
    nw = network_for(p.position)
    assert np.all(nw.connectivity_damage() == 0.0)
    nw.sever(nw.i == 0)
    cd = nw.connectivity_damage()
    assert cd[0] == pytest.approx(1.0 - (nw.degree[0] - np.count_nonzero(nw.i == 0))
                                  / nw.degree[0])
    nw.sever(np.ones(len(nw), dtype=bool))
    assert np.all(nw.connectivity_damage() == 1.0)


def test_severed_line_separates_without_forces():
    p = block(10.0, 4.0)
    left = p.position[:, 0] < 5.0
    p.velocity[left] = [-0.1, 0.0]
    p.velocity[~left] = [0.1, 0.0]
    solver = make_solver(p, dt=2e-5)
    nw = solver.network
    crossing = left[nw.i] != left[nw.j]
    nw.sever(crossing)
    solver._refresh_forces()
    gap0 = p.position[~left, 0].min() - p.position[left, 0].max()
    n = 200
    for _ in range(n):
        solver.step()
        assert np.all(solver.acc == 0.0)
    s = solver.state
    assert np.all(s.material.stress == 0.0)
    gap = s.x[~left, 0].min() - s.x[left, 0].max()
    assert gap - gap0 == pytest.approx(0.2 * n * 2e-5, rel=1e-9)
    assert np.all(nw.f[crossing] == 0.0)


def test_intact_network_matches_fixed_connectivity():
    p = block(4.0, 3.0)
    rng = np.random.default_rng(1)
    p.velocity[:] = rng.normal(0, 1e-3, p.velocity.shape)
    a = make_solver(p, dt=2e-5)
    b = make_solver(p, dt=2e-5, freeze_damage=True)
    for _ in range(100):
        a.step()
        b.step()
    assert np.all(a.network.f == 1.0)
    assert a.state.x.tobytes() == b.state.x.tobytes()
    assert a.state.v.tobytes() == b.state.v.tobytes()
    assert a.state.material.stress.tobytes() == b.state.material.stress.tobytes()
