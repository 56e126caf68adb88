"""Pseudo-spring bonds between initially neighboring particles.

Each bond carries an interaction factor f in [0, 1] that scales every SPH
pair term of its two particles. The factor softens with the bond's peak
tensile strain through the same exponential law as the particle damage and
drops to zero permanently once the bond has failed.
"""

from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from .constitutive import DAMAGE_CAP, damage
from .errors import ConfigurationError, NumericalBlowupError

REST_LENGTH = "rest_length"
CHARACTERISTIC_LENGTH = "h_c"


@dataclass
class SpringNetwork:
    i: np.ndarray
    j: np.ndarray
    rest_length: np.ndarray
    f: np.ndarray
    kappa: np.ndarray
    failed: np.ndarray
    params: SimpleNamespace  # per-bond E, eps0, G_f, h_c
    degree: np.ndarray  # initial incident bond count per particle
    length_scale: str = REST_LENGTH

    @property
    def n(self):
        return len(self.degree)

    def __len__(self):
        return len(self.i)

    @property
    def keys(self):
        return self.i * self.n + self.j

    def find(self, i, j):
        """Bond index for particles (i, j) or -1."""
        a, b = min(i, j), max(i, j)
        key = a * self.n + b
        keys = self.keys
        pos = int(np.searchsorted(keys, key))
        return pos if pos < len(keys) and keys[pos] == key else -1

    def interaction_factor(self, i, j):
        return interaction_factor(self, i, j)

    def connectivity_damage(self):
        total = np.bincount(self.i, weights=self.f, minlength=self.n)
        total += np.bincount(self.j, weights=self.f, minlength=self.n)
        deg = self.degree
        out = np.zeros(self.n)
        has = deg > 0
        out[has] = 1.0 - total[has] / deg[has]
        return np.clip(out, 0.0, 1.0)

    def characteristic_length(self):
        if self.length_scale == REST_LENGTH:
            return self.rest_length
        if self.length_scale == CHARACTERISTIC_LENGTH:
            return self.params.h_c
        raise ConfigurationError(f"unknown bond length scale {self.length_scale!r}")

    def copy(self):
        return SpringNetwork(self.i.copy(), self.j.copy(), self.rest_length.copy(),
                             self.f.copy(), self.kappa.copy(), self.failed.copy(),
                             SimpleNamespace(**{k: v.copy() for k, v in vars(self.params).items()}),
                             self.degree.copy(), self.length_scale)

    def sever(self, mask):
        """Fail the selected bonds outright (used to build test cracks)."""
        self.failed |= np.asarray(mask, dtype=bool)
        self.f[self.failed] = 0.0


def init_network(positions, neighbor_list, materials, material_index,
                 length_scale=REST_LENGTH):
    """One intact bond per initial neighbor pair.

    Bonds joining two materials take the constants of the one with the lower
    tensile strength.
    """
    x = np.asarray(positions, dtype=float)
    pairs = neighbor_list.pairs
    bi = pairs[:, 0].astype(np.int64)
    bj = pairs[:, 1].astype(np.int64)
    mat = np.asarray(material_index)
    ft = np.array([m.f_t for m in materials])
    mi, mj = mat[bi], mat[bj]
    weaker = np.where(ft[mj] < ft[mi], mj, mi)
    params = SimpleNamespace(**{
        name: np.array([getattr(m, name) for m in materials], dtype=float)[weaker]
        for name in ("E", "eps0", "G_f", "h_c")
    })
    d = x[bi] - x[bj]
    rest = np.sqrt(np.einsum("ij,ij->i", d, d))
    nb = len(bi)
    degree = np.bincount(bi, minlength=len(x)) + np.bincount(bj, minlength=len(x))
    return SpringNetwork(bi, bj, rest, np.ones(nb), np.zeros(nb), np.zeros(nb, dtype=bool),
                         params, degree.astype(float), length_scale)


def bond_strain(network, positions):
    x = np.asarray(positions, dtype=float)
    d = x[network.i] - x[network.j]
    length = np.sqrt(np.einsum("ij,ij->i", d, d))
    return (length - network.rest_length) / network.rest_length


def update_bonds(network, positions, frozen=False):
    """Advance bond histories to the current positions (in place)."""
    strain = bond_strain(network, positions)
    if not np.isfinite(strain).all():
        k = int(np.flatnonzero(~np.isfinite(strain))[0])
        raise NumericalBlowupError("non-finite bond strain", particle=int(network.i[k]))
    if frozen:
        return network
    np.maximum(network.kappa, np.maximum(strain, 0.0), out=network.kappa)
    d = damage(network.kappa, network.params, length=network.characteristic_length())
    network.failed |= d >= DAMAGE_CAP
    f = np.where(network.failed, 0.0, 1.0 - d)
    np.minimum(network.f, f, out=network.f)
    return network


def interaction_factor(network, i, j):
    """f for a bonded pair, 0 for pairs never bonded or failed."""
    if i == j:
        return 0.0
    k = network.find(i, j)
    return 0.0 if k < 0 else float(network.f[k])
