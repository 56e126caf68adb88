"""Discrete SPH conservation laws for a damaged elastic solid.

Pair terms are evaluated once per unordered pair and scattered to both
particles with opposite signs where the physics is antisymmetric. Per-particle
sums go through :class:`PairReducer`, whose summation order depends only on
the pair list, never on the number of worker threads.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from .constitutive import ConstitutiveState, hooke_rate
from .errors import ConfigurationError

CFL_NUMBER = 0.3


@dataclass
class ArtificialViscosity:
    eta1: float = 1.0
    eta2: float = 2.0
    epsilon_reg: float = 0.01

    def __post_init__(self):
        if self.eta1 < 0 or self.eta2 < 0:
            raise ConfigurationError("artificial viscosity coefficients must be non-negative")


@dataclass
class State:
    """Per-particle unknowns plus the clock."""

    x: np.ndarray
    v: np.ndarray
    rho: np.ndarray
    m: np.ndarray
    energy: np.ndarray  # specific internal energy, J/kg
    material: ConstitutiveState
    time: float = 0.0
    step: int = 0

    @classmethod
    def from_particles(cls, particles):
        n = len(particles)
        return cls(particles.position.copy(), particles.velocity.copy(),
                   particles.density.copy(), particles.mass.copy(), np.zeros(n),
                   ConstitutiveState.zeros(n))

    @property
    def n(self):
        return len(self.m)


class PairReducer:
    """Deterministic per-particle sums of pair contributions.

    Contributions for particle ``i`` of pair (i, j) and for ``j`` are gathered
    into particle-major order once; each particle's terms are then summed in a
    fixed order. Threads split the particle range at segment boundaries.
    """

    def __init__(self, i, j, n, threads=1):
        self.n = n
        self.npairs = len(i)
        owner = np.concatenate([i, j])
        self.perm = np.argsort(owner, kind="stable")
        counts = np.bincount(owner, minlength=n)
        self.starts = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
        self.counts = counts
        self.threads = max(1, int(threads))
        self._pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None
        self._chunks = self._split()

    def _split(self):
        if self.n == 0:
            return []
        edges = np.linspace(0, self.n, min(self.threads, self.n) + 1).astype(int)
        return [(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]

    def _reduce_range(self, vals, out, a, b):
        lo = self.starts[a]
        hi = self.starts[b] if b < self.n else len(self.perm)
        if hi == lo:
            out[a:b] = 0.0
            return
        seg = vals[self.perm[lo:hi]]
        local = self.starts[a:b] - lo
        cnt = self.counts[a:b]
        nonempty = cnt > 0
        res = np.zeros((b - a,) + vals.shape[1:])
        res[nonempty] = np.add.reduceat(seg, local[nonempty], axis=0)
        out[a:b] = res

    def reduce(self, wi, wj):
        """Sum ``wi`` onto first members and ``wj`` onto second members."""
        vals = np.concatenate([wi, wj])
        out = np.empty((self.n,) + vals.shape[1:])
        if self._pool is None:
            for a, b in self._chunks:
                self._reduce_range(vals, out, a, b)
        else:
            list(self._pool.map(lambda ab: self._reduce_range(vals, out, *ab), self._chunks))
        return out

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None


def pair_geometry(state, network, kernel, contacts=None, velocity=None):
    """Pair arrays shared by all rate equations.

    Bonds come first with their interaction factor; ``contacts`` (unbonded
    pairs inside the support) follow with factor zero.
    """
    i, j, f = network.i, network.j, network.f
    if contacts is not None and len(contacts):
        i = np.concatenate([i, contacts[:, 0]])
        j = np.concatenate([j, contacts[:, 1]])
        f = np.concatenate([f, np.zeros(len(contacts))])
    x = state.x
    v = state.v if velocity is None else velocity
    dx = x[i] - x[j]
    r = np.sqrt(np.einsum("ij,ij->i", dx, dx))
    if np.any(r == 0.0):
        k = int(np.flatnonzero(r == 0.0)[0])
        raise ConfigurationError(f"coincident particles {i[k]} and {j[k]}")
    g = kernel.pair_gradient(dx, r)
    return SimpleNamespace(i=i, j=j, f=f, dx=dx, r=r, g=g, vij=v[i] - v[j],
                           nbonds=len(network.i))


def _reducer(state, geo, reducer):
    if reducer is not None and reducer.npairs == len(geo.i):
        return reducer
    return PairReducer(geo.i, geo.j, state.n)


def continuity_rhs(state, network, kernel, geo=None, reducer=None):
    """Density rate: sum_j m_j f_ij (v_i - v_j) . grad_i W_ij."""
    geo = geo or pair_geometry(state, network, kernel)
    red = _reducer(state, geo, reducer)
    term = geo.f * np.einsum("ij,ij->i", geo.vij, geo.g)
    m = state.m
    return red.reduce(m[geo.j] * term, m[geo.i] * term)


def velocity_gradient(state, network, kernel, geo=None, reducer=None):
    """L_ab = dv_a/dx_b as (n, 4) rows [xx, xy, yx, yy], bond-factor weighted."""
    geo = geo or pair_geometry(state, network, kernel)
    red = _reducer(state, geo, reducer)
    dv = -geo.vij * geo.f[:, None]
    outer = np.column_stack([dv[:, 0] * geo.g[:, 0], dv[:, 0] * geo.g[:, 1],
                             dv[:, 1] * geo.g[:, 0], dv[:, 1] * geo.g[:, 1]])
    m, rho = state.m, state.rho
    wi = outer * (m[geo.j] / rho[geo.i])[:, None]
    wj = outer * (m[geo.i] / rho[geo.j])[:, None]
    return red.reduce(wi, wj)


def strain_rate_and_spin(L):
    """Symmetric part [xx, yy, xy] and spin w = (L_xy - L_yx)/2."""
    rate = np.column_stack([L[:, 0], L[:, 3], 0.5 * (L[:, 1] + L[:, 2])])
    return rate, 0.5 * (L[:, 1] - L[:, 2])


def artificial_viscosity(xij, vij, h, c_bar, rho_bar, visc):
    """Monaghan pair viscosity; zero for separating pairs."""
    xij = np.atleast_2d(np.asarray(xij, dtype=float))
    vij = np.atleast_2d(np.asarray(vij, dtype=float))
    vx = np.einsum("ij,ij->i", vij, xij)
    r2 = np.einsum("ij,ij->i", xij, xij)
    mu = h * vx / (r2 + visc.epsilon_reg * h * h)
    pi = np.where(vx < 0.0, (-visc.eta1 * c_bar * mu + visc.eta2 * mu * mu) / rho_bar, 0.0)
    return pi if pi.size > 1 else float(pi[0])


def pair_viscosity(state, geo, kernel, visc, sound_speed):
    if visc.eta1 == 0.0 and visc.eta2 == 0.0:
        return np.zeros(len(geo.i))
    c_bar = 0.5 * (sound_speed[geo.i] + sound_speed[geo.j])
    rho_bar = 0.5 * (state.rho[geo.i] + state.rho[geo.j])
    return artificial_viscosity(geo.dx, geo.vij, kernel.h, c_bar, rho_bar, visc).reshape(-1)


def _stress_dot_grad(geo, stress, rho):
    s = stress / (rho * rho)[:, None]
    a = s[geo.i] + s[geo.j]
    g = geo.g
    return np.column_stack([a[:, 0] * g[:, 0] + a[:, 2] * g[:, 1],
                            a[:, 2] * g[:, 0] + a[:, 1] * g[:, 1]])


def pair_forces(state, geo, kernel, visc, sound_speed, stress, extra_stress=None):
    """Per-pair acceleration kernels t_ij (before the m_j factor).

    Returns a dict of (P, 2) arrays: ``stress``, ``viscous_stress`` (if
    ``extra_stress`` is given) and ``viscosity``.
    """
    out = {"stress": geo.f[:, None] * _stress_dot_grad(geo, stress, state.rho)}
    if extra_stress is not None:
        out["viscous_stress"] = geo.f[:, None] * _stress_dot_grad(geo, extra_stress, state.rho)
    pi = pair_viscosity(state, geo, kernel, visc, sound_speed)
    out["viscosity"] = -pi[:, None] * geo.g
    return out


def momentum_rhs(state, network, kernel, visc, sound_speed, stress=None, geo=None,
                 reducer=None, extra_stress=None, split=False):
    """Internal acceleration from stress divergence and artificial viscosity.

    ``stress`` defaults to the damaged effective stress of ``state``. With
    ``split`` a dict of per-category accelerations is returned instead of the
    total.
    """
    geo = geo or pair_geometry(state, network, kernel)
    red = _reducer(state, geo, reducer)
    if stress is None:
        stress = state.material.effective_stress()
    terms = pair_forces(state, geo, kernel, visc, sound_speed, stress, extra_stress)
    names = list(terms)
    t = np.concatenate([terms[k] for k in names], axis=1)
    m = state.m
    acc = red.reduce(t * m[geo.j][:, None], -t * m[geo.i][:, None])
    parts = {k: acc[:, 2 * c:2 * c + 2] for c, k in enumerate(names)}
    if split:
        return parts
    return sum(parts.values())


def energy_rhs(state, network, kernel, visc, sound_speed, stress=None, geo=None,
               reducer=None, extra_stress=None):
    """Specific internal energy rate (diagnostic only)."""
    geo = geo or pair_geometry(state, network, kernel)
    red = _reducer(state, geo, reducer)
    if stress is None:
        stress = state.material.effective_stress()
    terms = pair_forces(state, geo, kernel, visc, sound_speed, stress, extra_stress)
    t = sum(terms.values())
    w = -0.5 * np.einsum("ij,ij->i", geo.vij, t)
    return red.reduce(state.m[geo.j] * w, state.m[geo.i] * w)


def cfl_limit(h, sound_speed, velocity=None, cfl=CFL_NUMBER):
    """Largest stable step C*h/(c_max + v_max)."""
    c_max = float(np.max(sound_speed))
    v_max = 0.0
    if velocity is not None and len(velocity):
        v_max = float(np.sqrt(np.max(np.einsum("ij,ij->i", velocity, velocity))))
    return cfl * h / (c_max + v_max)


def rayleigh_damping(velocity, alpha):
    """Mass-proportional damping acceleration."""
    if alpha < 0:
        raise ConfigurationError("Rayleigh alpha must be non-negative")
    return -alpha * np.asarray(velocity, dtype=float)


def kelvin_voigt_stress(strain_rate, mat, beta, damage=None, plane="stress"):
    """Stiffness-proportional damping as a viscous stress beta * C : D."""
    if beta < 0:
        raise ConfigurationError("Rayleigh beta must be non-negative")
    out = beta * hooke_rate(strain_rate, mat, plane)
    if damage is not None:
        out *= (1.0 - damage)[:, None]
    return out
